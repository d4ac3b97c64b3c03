#include "opesel/ope.hpp"

#include "opesel/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace opesel {

double OpeEstimate::diagnostic(const std::string& key) const {
  for (const auto& [name, value] : diagnostics) {
    if (name == key) return value;
  }
  throw std::out_of_range("no diagnostic '" + key + "' on " + method);
}

ImportanceWeights importance_weights(const Dataset& dataset, const TabularPolicy& target,
                                     const TabularPolicy& behavior) {
  const std::size_t m = dataset.n_episodes();
  const int horizon = dataset.max_episode_length();
  ImportanceWeights out;
  out.cumulative.resize(static_cast<Eigen::Index>(m), horizon + 1);
  for (std::size_t j = 0; j < m; ++j) {
    const auto ep = dataset.episode(j);
    const auto row = static_cast<Eigen::Index>(j);
    double ratio = 1.0;
    out.cumulative(row, 0) = 1.0;
    for (int t = 1; t <= horizon; ++t) {
      if (static_cast<std::size_t>(t) <= ep.size()) {
        const auto& tr = ep[static_cast<std::size_t>(t - 1)];
        const double pb = behavior.prob(tr.state, tr.action);
        if (!(pb > 0.0)) {
          throw std::invalid_argument("importance_weights: behavior policy gives logged action " +
                                      std::to_string(tr.action) + " at state " +
                                      std::to_string(tr.state) + " zero probability");
        }
        ratio *= target.prob(tr.state, tr.action) / pb;
      }
      out.cumulative(row, t) = ratio;
    }
  }
  out.average = out.cumulative.colwise().mean().transpose();
  return out;
}

std::vector<double> episode_returns(const Dataset& dataset, double discount) {
  std::vector<double> out(dataset.n_episodes(), 0.0);
  for (std::size_t j = 0; j < out.size(); ++j) {
    double scale = 1.0;
    for (const auto& tr : dataset.episode(j)) {
      out[j] += scale * tr.reward;
      scale *= discount;
    }
  }
  return out;
}

namespace {

std::string epsilon_label(double epsilon) { return "eps=" + format_number(epsilon); }

std::string horizon_label(int horizon) { return "H=" + std::to_string(horizon); }

void require_episodes(const Dataset& dataset, const char* who) {
  if (dataset.n_episodes() == 0) throw std::invalid_argument(std::string(who) + ": empty dataset");
}

Eigen::VectorXd expected_values(const Eigen::MatrixXd& q, const TabularPolicy& policy) {
  if (q.rows() != policy.n_states() || q.cols() != policy.n_actions()) {
    throw std::invalid_argument("Q table and policy differ in shape");
  }
  return (q.array() * policy.probs().array()).rowwise().sum();
}

double mean_initial_value(const Dataset& dataset, const Eigen::VectorXd& v) {
  double total = 0.0;
  for (int s : dataset.initial_states()) total += v(s);
  return total / static_cast<double>(dataset.n_episodes());
}

}  // namespace

OpeEstimate wis(const Dataset& dataset, const TabularPolicy& policy,
                const TabularPolicy& behavior, double epsilon, double discount) {
  require_episodes(dataset, "wis");
  const TabularPolicy target = soften(policy, epsilon);
  const auto weights = importance_weights(dataset, target, behavior);
  const Eigen::VectorXd final = weights.cumulative.col(weights.cumulative.cols() - 1);
  const auto returns = episode_returns(dataset, discount);

  double total = 0.0;
  double weighted = 0.0;
  double squares = 0.0;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  int zero = 0;
  for (std::size_t j = 0; j < returns.size(); ++j) {
    const double rho = final(static_cast<Eigen::Index>(j));
    total += rho;
    squares += rho * rho;
    weighted += rho * returns[j];
    if (rho == 0.0) {
      ++zero;
    } else {
      lo = std::min(lo, returns[j]);
      hi = std::max(hi, returns[j]);
    }
  }
  if (!(total > 0.0)) {
    throw UndefinedEstimate("wis: every episode has zero importance weight (" +
                            epsilon_label(epsilon) + ")");
  }
  OpeEstimate est;
  est.method = "wis";
  est.hyperparams = epsilon_label(epsilon);
  // Rounding in the ratio can step an ulp outside the returns it averages.
  est.value = std::clamp(weighted / total, lo, hi);
  est.diagnostics = {{"ess", total * total / squares}, {"zero_weight_episodes", zero}};
  return est;
}

OpeEstimate am_tabular(const TabularMDP& model, const TabularPolicy& policy) {
  const auto values = evaluate_policy_analytic(model, policy);
  OpeEstimate est;
  est.method = "am";
  est.hyperparams = "analytic";
  est.value = values.scalar_value;
  return est;
}

Eigen::VectorXd state_action_input(const Eigen::VectorXd& features, int action, int n_actions) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(features.size() + n_actions);
  out.head(features.size()) = features;
  out(features.size() + action) = 1.0;
  return out;
}

AmRegressors fit_am_models(const Dataset& dataset, const Eigen::MatrixXd& features, int n_actions,
                           const nn::NetConfig& config) {
  const auto transitions = dataset.transitions();
  if (transitions.empty()) throw std::invalid_argument("fit_am_models: empty dataset");
  const auto n = static_cast<Eigen::Index>(transitions.size());
  const auto d = features.cols();
  nn::PatternSet delta;
  nn::PatternSet reward;
  delta.inputs = Eigen::MatrixXd::Zero(n, d + n_actions);
  delta.targets.resize(n, d);
  reward.targets.resize(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& tr = transitions[static_cast<std::size_t>(i)];
    delta.inputs.row(i).head(d) = features.row(tr.state);
    delta.inputs(i, d + tr.action) = 1.0;
    delta.targets.row(i) = features.row(tr.next_state) - features.row(tr.state);
    reward.targets(i, 0) = tr.reward;
  }
  reward.inputs = delta.inputs;

  nn::NetConfig delta_config = config;
  delta_config.seed = derive_seed(config.seed, 1);
  nn::NetConfig reward_config = config;
  reward_config.seed = derive_seed(config.seed, 2);
  return AmRegressors{nn::fit_regressor(delta, delta_config),
                      nn::fit_regressor(reward, reward_config)};
}

OpeEstimate am_rollout(const AmRegressors& models, const FeaturePolicy& policy, int n_actions,
                       int horizon, const Eigen::MatrixXd& initial_features, double discount) {
  if (horizon < 1) throw std::invalid_argument("am_rollout: horizon must be >= 1");
  if (initial_features.rows() == 0) throw std::invalid_argument("am_rollout: no initial states");
  const auto rows = initial_features.rows();
  const auto d = initial_features.cols();
  Eigen::MatrixXd x = initial_features;
  Eigen::VectorXd totals = Eigen::VectorXd::Zero(rows);
  Eigen::MatrixXd inputs = Eigen::MatrixXd::Zero(rows, d + n_actions);
  double scale = 1.0;
  for (int t = 1; t <= horizon; ++t) {
    inputs.setZero();
    for (Eigen::Index i = 0; i < rows; ++i) {
      const int a = policy(x.row(i).transpose());
      if (a < 0 || a >= n_actions) throw std::out_of_range("am_rollout: policy returned bad action");
      inputs.row(i).head(d) = x.row(i);
      inputs(i, d + a) = 1.0;
    }
    totals += scale * models.reward.predict(inputs).col(0);
    x += models.delta.predict(inputs);
    scale *= discount;
  }
  OpeEstimate est;
  est.method = "am";
  est.hyperparams = horizon_label(horizon);
  est.value = totals.mean();
  est.diagnostics = {{"rollouts", static_cast<double>(rows)}};
  return est;
}

FqeResult fqe_tabular(const Dataset& dataset, const TabularPolicy& policy, int horizon,
                      double discount) {
  require_episodes(dataset, "fqe_tabular");
  if (horizon < 1) throw std::invalid_argument("fqe_tabular: horizon must be >= 1");
  const int n_states = policy.n_states();
  const int n_actions = policy.n_actions();
  const auto transitions = dataset.transitions();
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(n_states, n_actions);
  for (const auto& tr : transitions) counts(tr.state, tr.action) += 1.0;

  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(n_states, n_actions);
  double residual = 0.0;
  for (int h = 1; h <= horizon; ++h) {
    const Eigen::VectorXd v = expected_values(q, policy);
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(n_states, n_actions);
    for (const auto& tr : transitions) {
      const double y = tr.done ? tr.reward : tr.reward + discount * v(tr.next_state);
      sums(tr.state, tr.action) += clip_value(y);
    }
    Eigen::MatrixXd next = (counts.array() > 0.0).select(sums.array() / counts.array().max(1.0), 0.0);
    residual = (next - q).cwiseAbs().maxCoeff();
    q = std::move(next);
  }
  FqeResult out;
  out.q.table = q;
  out.estimate.method = "fqe";
  out.estimate.hyperparams = horizon_label(horizon);
  out.estimate.value = mean_initial_value(dataset, expected_values(q, policy));
  out.estimate.diagnostics = {{"last_update", residual}};
  return out;
}

FqeResult fqe_neural(const Dataset& dataset, const Eigen::MatrixXd& features,
                     const TabularPolicy& policy, int horizon, const nn::NetConfig& config,
                     double discount) {
  require_episodes(dataset, "fqe_neural");
  if (horizon < 1) throw std::invalid_argument("fqe_neural: horizon must be >= 1");
  if (features.rows() != policy.n_states()) {
    throw std::invalid_argument("fqe_neural: one feature row per policy state required");
  }
  const auto transitions = dataset.transitions();
  const auto n = static_cast<Eigen::Index>(transitions.size());
  nn::PatternSet patterns;
  patterns.inputs.resize(n, features.cols());
  patterns.targets.resize(n, 1);
  patterns.columns.resize(transitions.size());
  patterns.heads = policy.n_actions();
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& tr = transitions[static_cast<std::size_t>(i)];
    patterns.inputs.row(i) = features.row(tr.state);
    patterns.columns[static_cast<std::size_t>(i)] = tr.action;
  }

  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(policy.n_states(), policy.n_actions());
  std::shared_ptr<const nn::Model> model;
  for (int h = 1; h <= horizon; ++h) {
    const Eigen::VectorXd v = expected_values(q, policy);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& tr = transitions[static_cast<std::size_t>(i)];
      const double y = tr.done ? tr.reward : tr.reward + discount * v(tr.next_state);
      patterns.targets(i, 0) = clip_value(y);
    }
    nn::NetConfig step = config;
    step.seed = derive_seed(config.seed, static_cast<std::uint64_t>(h));
    model = std::make_shared<nn::Model>(nn::fit_regressor(patterns, step));
    q = materialize(*model, features);
  }
  double sq = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& tr = transitions[static_cast<std::size_t>(i)];
    const double gap = patterns.targets(i, 0) - q(tr.state, tr.action);
    sq += gap * gap;
  }
  FqeResult out;
  out.q = QFunction{q, model};
  out.estimate.method = "fqe";
  out.estimate.hyperparams = horizon_label(horizon);
  out.estimate.value = mean_initial_value(dataset, expected_values(q, policy));
  out.estimate.diagnostics = {{"td_residual", std::sqrt(sq / static_cast<double>(n))}};
  return out;
}

OpeEstimate wdr(const Dataset& dataset, const TabularPolicy& policy, const TabularPolicy& behavior,
                double epsilon, const Eigen::MatrixXd& qhat, double discount,
                const std::string& method) {
  require_episodes(dataset, "wdr");
  const TabularPolicy target = soften(policy, epsilon);
  const auto weights = importance_weights(dataset, target, behavior);
  const Eigen::VectorXd v = expected_values(qhat, target);

  double total = 0.0;
  int skipped = 0;
  for (std::size_t j = 0; j < dataset.n_episodes(); ++j) {
    const auto ep = dataset.episode(j);
    const auto row = static_cast<Eigen::Index>(j);
    double scale = 1.0;
    for (std::size_t k = 0; k < ep.size(); ++k) {
      const auto t = static_cast<Eigen::Index>(k + 1);
      const auto& tr = ep[k];
      const double w = weights.average(t);
      if (w == 0.0) {
        ++skipped;
        scale *= discount;
        continue;
      }
      const double now = weights.cumulative(row, t) / w;
      const double before = weights.cumulative(row, t - 1) / weights.average(t - 1);
      total += now * scale * tr.reward - (now * qhat(tr.state, tr.action) - before * v(tr.state));
      scale *= discount;
    }
  }
  OpeEstimate est;
  est.method = method;
  est.hyperparams = epsilon_label(epsilon);
  est.value = total / static_cast<double>(dataset.n_episodes());
  est.diagnostics = {{"skipped_terms", skipped}};
  return est;
}

OpeEstimate fqi_value_score(const Eigen::MatrixXd& q, const TabularPolicy& policy,
                            const Dataset& dataset) {
  require_episodes(dataset, "fqi_value_score");
  OpeEstimate est;
  est.method = "fqi_value";
  est.value = mean_initial_value(dataset, expected_values(q, policy));
  return est;
}

double rms_tde(const Dataset& dataset, const TabularPolicy& policy, const Eigen::MatrixXd& q,
               double discount) {
  const auto transitions = dataset.transitions();
  if (transitions.empty()) throw std::invalid_argument("rms_tde: empty dataset");
  const Eigen::VectorXd v = expected_values(q, policy);
  double sq = 0.0;
  for (const auto& tr : transitions) {
    const double target = tr.done ? tr.reward : tr.reward + discount * v(tr.next_state);
    const double delta = target - q(tr.state, tr.action);
    sq += delta * delta;
  }
  return std::sqrt(sq / static_cast<double>(transitions.size()));
}

TabularPolicy estimate_behavior_classifier(const Dataset& dataset, const Eigen::MatrixXd& features,
                                           int n_actions, const nn::NetConfig& config) {
  const auto transitions = dataset.transitions();
  if (transitions.empty()) throw std::invalid_argument("estimate_behavior_classifier: empty dataset");
  nn::PatternSet patterns;
  patterns.inputs.resize(static_cast<Eigen::Index>(transitions.size()), features.cols());
  patterns.labels.resize(transitions.size());
  for (std::size_t i = 0; i < transitions.size(); ++i) {
    patterns.inputs.row(static_cast<Eigen::Index>(i)) = features.row(transitions[i].state);
    patterns.labels[i] = transitions[i].action;
  }
  const auto model = nn::fit_classifier(patterns, n_actions, config);
  return TabularPolicy(model.predict(features));
}

}  // namespace opesel
