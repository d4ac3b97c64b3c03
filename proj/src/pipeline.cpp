#include "opesel/pipeline.hpp"

#include "opesel/ope.hpp"
#include "opesel/parallel.hpp"
#include "opesel/rng.hpp"
#include "opesel/selection.hpp"
#include "opesel/sepsis.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>

namespace opesel {

namespace {

constexpr int kStates = sepsis::kNumStates;
constexpr int kActions = sepsis::kNumActions;

const Eigen::MatrixXd& features() {
  static const Eigen::MatrixXd matrix = sepsis::feature_matrix();
  return matrix;
}

bool wants(const std::vector<std::string>& methods, const std::string& m) {
  return std::find(methods.begin(), methods.end(), m) != methods.end();
}

std::vector<std::string> active_methods(const ExperimentConfig& config) {
  std::vector<std::string> out;
  for (const auto& m : config.methods) {
    // WDR-AM needs exact Q values of the estimated model, so it is tabular only
    if (m == "wdr_am" && config.state_mode == StateMode::continuous) continue;
    out.push_back(m);
  }
  return out;
}

OpeEstimate undefined(const std::string& method, const std::string& hyperparams) {
  OpeEstimate est;
  est.method = method;
  est.hyperparams = hyperparams;
  est.value = std::numeric_limits<double>::quiet_NaN();
  est.defined = false;
  return est;
}

nn::NetConfig with_seed(nn::NetConfig net, std::uint64_t seed) {
  net.seed = seed;
  return net;
}

std::string header_for(const ExperimentConfig& config, std::uint64_t seed) {
  return config.describe() + "seed = " + std::to_string(seed) + "\n";
}

}  // namespace

BehaviorSpec behavior_for(const BehaviorSpec& behavior, int m) {
  if (behavior.kind != BehaviorSpec::Kind::mixture) return behavior;
  long total = 0;
  for (const auto& [spec, count] : behavior.components) total += count;
  if (total == m) return behavior;
  if (total <= 0) throw std::invalid_argument("behavior_for: mixture has no episodes");
  std::vector<std::pair<BehaviorSpec, int>> parts = behavior.components;
  std::vector<std::pair<double, std::size_t>> remainders;
  int assigned = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const double exact = static_cast<double>(behavior.components[i].second) * m / static_cast<double>(total);
    parts[i].second = static_cast<int>(std::floor(exact));
    assigned += parts[i].second;
    remainders.emplace_back(exact - std::floor(exact), i);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < m; ++k, ++assigned) ++parts[remainders[k % remainders.size()].second].second;
  return BehaviorSpec::mixture(std::move(parts));
}

Dataset generate_data(const ExperimentConfig& config, int m, std::uint64_t seed, const BehaviorSpec& behavior) {
  const sepsis::Simulator sim;
  BehaviorSpec spec = behavior_for(behavior, m);
  return generate(sim, spec, m, config.max_len, seed);
}

CandidateSet train_candidates(const Dataset& train, const ExperimentConfig& config, std::uint64_t seed) {
  if (config.state_mode == StateMode::discrete) {
    auto set = build_tabular_candidates(train, kStates, kActions, config.tabular_iterations, config.discount);
    set.seed = seed;
    return set;
  }
  return build_candidates(train, features(), kActions, config.grid, config.fqi_net,
                          derive_seed(seed, seed_stream::training), config.discount, config.workers);
}

namespace {

Truths truths_in(const CandidateSet& candidates, const TabularMDP& exact) {
  Truths truths;
  for (const auto& c : candidates.candidates) {
    truths.policy_ids.push_back(c.id);
    truths.values.push_back(evaluate_policy_analytic(exact, c.policy(kActions)).scalar_value);
  }
  return truths;
}

}  // namespace

Truths ground_truths(const CandidateSet& candidates, const ExperimentConfig& config) {
  const sepsis::Simulator sim;
  return truths_in(candidates, sim.exact_mdp(config.discount));
}

ScoreTable score_candidates(const CandidateSet& candidates, const Dataset& val,
                            const ExperimentConfig& config, std::uint64_t seed) {
  const auto methods = active_methods(config);
  const bool discrete = config.state_mode == StateMode::discrete;
  const std::uint64_t aux = derive_seed(seed, seed_stream::auxiliary);
  const double gamma = config.discount;

  const bool need_behavior = wants(methods, "wis") || wants(methods, "wdr_fqe") || wants(methods, "wdr_am");
  TabularPolicy behavior;
  if (need_behavior) {
    behavior = discrete ? estimate_tabular_behavior(val, kStates, kActions)
                        : estimate_behavior_classifier(val, features(), kActions, with_seed(config.aux_net, derive_seed(aux, 1)));
  }
  std::optional<TabularMDP> model;
  if (discrete && (wants(methods, "am") || wants(methods, "wdr_am"))) {
    model = estimate_tabular_mdp(val, kStates, kActions, gamma);
  }
  std::optional<AmRegressors> am_models;
  Eigen::MatrixXd initial_features;
  if (!discrete && wants(methods, "am")) {
    am_models = fit_am_models(val, features(), kActions, with_seed(config.aux_net, derive_seed(aux, 2)));
    const auto starts = val.initial_states();
    initial_features.resize(static_cast<Eigen::Index>(starts.size()), features().cols());
    for (std::size_t i = 0; i < starts.size(); ++i) {
      initial_features.row(static_cast<Eigen::Index>(i)) = features().row(starts[i]);
    }
  }

  const std::size_t k = candidates.size();
  ScoreTable table;
  table.methods = methods;
  table.estimates.assign(methods.size(), std::vector<OpeEstimate>(k));
  for (const auto& c : candidates.candidates) table.policy_ids.push_back(c.id);

  parallel_for(k, config.workers, [&](std::size_t i) {
    const Candidate& c = candidates.candidates[i];
    const TabularPolicy pi = c.policy(kActions);
    std::optional<FqeResult> fqe;
    auto fqe_result = [&]() -> const FqeResult& {
      if (!fqe) {
        fqe = discrete ? fqe_tabular(val, pi, config.fqe_horizon, gamma)
                       : fqe_neural(val, features(), pi, config.fqe_horizon,
                                    with_seed(config.aux_net, derive_seed(aux, 100 + i)), gamma);
      }
      return *fqe;
    };
    for (std::size_t m = 0; m < methods.size(); ++m) {
      const std::string& name = methods[m];
      OpeEstimate est;
      if (name == "wis") {
        try {
          est = wis(val, pi, behavior, config.epsilon, gamma);
        } catch (const UndefinedEstimate&) {
          est = undefined("wis", "eps=" + format_number(config.epsilon));
        }
      } else if (name == "am") {
        if (discrete) {
          try {
            est = am_tabular(*model, pi);
          } catch (const EvaluationInfeasible&) {
            est = undefined("am", "analytic");
          }
        } else {
          if (!c.q.model) throw std::runtime_error("am rollout needs a network policy for " + c.id);
          const auto act = [&c](const Eigen::VectorXd& x) { return c.q.greedy_action(x); };
          est = am_rollout(*am_models, act, kActions, config.am_horizon, initial_features, gamma);
        }
      } else if (name == "fqe") {
        est = fqe_result().estimate;
      } else if (name == "wdr_fqe") {
        est = wdr(val, pi, behavior, config.epsilon, fqe_result().q.table, gamma, "wdr_fqe");
      } else if (name == "wdr_am") {
        try {
          const auto q = evaluate_policy_analytic(*model, soften(pi, config.epsilon)).q;
          est = wdr(val, pi, behavior, config.epsilon, q, gamma, "wdr_am");
        } catch (const EvaluationInfeasible&) {
          est = undefined("wdr_am", "eps=" + format_number(config.epsilon));
        }
      } else if (name == "fqi_value") {
        est = fqi_value_score(c.q.table, pi, val);
      } else if (name == "rms_tde") {
        est.method = "rms_tde";
        est.value = rms_tde(val, pi, c.q.table, gamma);
      }
      table.estimates[m][i] = std::move(est);
    }
  });
  return table;
}

SeedRun run_seed(const ExperimentConfig& config, std::uint64_t seed) {
  SeedRun run;
  run.train = generate_data(config, config.m_train, derive_seed(seed, seed_stream::train_data), config.behavior);
  run.val = generate_data(config, config.m_val, derive_seed(seed, seed_stream::val_data), config.behavior);
  run.candidates = train_candidates(run.train, config, seed);
  run.truths = ground_truths(run.candidates, config);
  run.scores = score_candidates(run.candidates, run.val, config, seed);
  run.report = make_report(run.scores, run.truths, config, seed);
  return run;
}

void write_seed_reports(const std::filesystem::path& dir, const ExperimentConfig& config,
                        const SelectionReport& report, const ScoreTable& scores, const Truths& truths) {
  const std::string header = header_for(config, report.seed);
  std::ostringstream s;
  write_scores(s, scores, header);
  write_file_atomic(dir / "scores.csv", s.str());
  std::ostringstream t;
  write_truths(t, truths, header);
  write_file_atomic(dir / "truths.csv", t.str());
  std::ostringstream r;
  write_report_csv(r, report, header);
  write_file_atomic(dir / "report.csv", r.str());
  write_file_atomic(dir / "summary.json", summary_json(report, config));
}

PipelineResult run_pipeline(const ExperimentConfig& config) {
  config.validate();
  PipelineResult result;
  for (std::uint64_t seed : config.seeds) {
    try {
      const SeedRun run = run_seed(config, seed);
      write_seed_reports(config.output_dir / ("seed_" + std::to_string(seed)), config, run.report,
                         run.scores, run.truths);
      result.reports.push_back(run.report);
    } catch (const std::exception& e) {
      const std::string message = "seed=" + std::to_string(seed) + ": " + e.what();
      std::cerr << "opesel: " << message << '\n';
      result.failures.push_back(message);
    }
  }
  write_file_atomic(config.output_dir / "aggregate.json", aggregate_json(result.reports, config, result.failures));
  return result;
}

namespace {

void append_rows(std::ostream& out, const std::string& axis, const std::string& value, std::uint64_t seed,
                 const ScoreTable& scores, const Truths& truths) {
  for (const auto& m : scores.methods) {
    const auto s = summarize_method(m, scores.scores(m), truths.values, scores.policy_ids);
    out << axis << ',' << value << ',' << seed << ',' << m << ','
        << (s.spearman ? format_number(*s.spearman) : "nan") << ',' << format_number(s.regret_at_1) << ','
        << format_number(s.regret_at_5) << ',' << format_number(s.regret_at_10) << '\n';
  }
}

std::vector<std::string> keep(const std::vector<std::string>& methods, std::initializer_list<const char*> names) {
  std::vector<std::string> out;
  for (const auto& m : methods) {
    for (const char* n : names) {
      if (m == n) out.push_back(m);
    }
  }
  return out;
}

}  // namespace

void run_analyze(const ExperimentConfig& config) {
  config.validate();
  const sepsis::Simulator sim;
  const TabularMDP exact = sim.exact_mdp(config.discount);
  const std::string header = comment_block(config.describe());
  std::ostringstream sweeps;
  sweeps << header << "axis,value,seed,method,spearman,regret@1,regret@5,regret@10\n";

  std::vector<std::vector<double>> stage1_scores;
  std::vector<std::vector<double>> stage2_scores;
  std::vector<std::vector<double>> truth_vectors;

  for (std::uint64_t seed : config.seeds) {
    const Dataset train = generate_data(config, config.m_train, derive_seed(seed, seed_stream::train_data), config.behavior);
    const Dataset val = generate_data(config, config.m_val, derive_seed(seed, seed_stream::val_data), config.behavior);
    const CandidateSet candidates = train_candidates(train, config, seed);
    const Truths truths = truths_in(candidates, exact);
    const ScoreTable base = score_candidates(candidates, val, config, seed);
    append_rows(sweeps, "base", "-", seed, base, truths);
    stage1_scores.push_back(base.scores(config.stage1));
    stage2_scores.push_back(base.scores(config.stage2));
    truth_vectors.push_back(truths.values);

    for (double eps : config.sweep_epsilon) {
      ExperimentConfig c = config;
      c.epsilon = eps;
      c.methods = keep(config.methods, {"wis", "wdr_fqe", "wdr_am"});
      if (c.methods.empty()) continue;
      append_rows(sweeps, "epsilon", format_number(eps), seed, score_candidates(candidates, val, c, seed), truths);
    }
    for (int h : config.sweep_horizon) {
      ExperimentConfig c = config;
      c.fqe_horizon = h;
      c.am_horizon = h;
      c.methods = keep(config.methods, {"fqe", "wdr_fqe"});
      if (config.state_mode == StateMode::continuous && wants(config.methods, "am")) c.methods.push_back("am");
      if (c.methods.empty()) continue;
      append_rows(sweeps, "horizon", std::to_string(h), seed, score_candidates(candidates, val, c, seed), truths);
    }
    for (int m_val : config.sweep_m_val) {
      const Dataset smaller = generate_data(config, m_val, derive_seed(seed, seed_stream::val_data), config.behavior);
      append_rows(sweeps, "m_val", std::to_string(m_val), seed, score_candidates(candidates, smaller, config, seed),
                  truths);
    }
    for (const auto& label : config.sweep_behavior) {
      ExperimentConfig c = config;
      c.behavior = BehaviorSpec::parse(label);
      const Dataset b_train = generate_data(c, c.m_train, derive_seed(seed, seed_stream::train_data), c.behavior);
      const Dataset b_val = generate_data(c, c.m_val, derive_seed(seed, seed_stream::val_data), c.behavior);
      const CandidateSet b_candidates = train_candidates(b_train, c, seed);
      append_rows(sweeps, "behavior", c.behavior.label(), seed, score_candidates(b_candidates, b_val, c, seed),
                  truths_in(b_candidates, exact));
    }
  }
  write_file_atomic(config.output_dir / "analyze" / "sweeps.csv", sweeps.str());

  const int k = static_cast<int>(truth_vectors.front().size());
  std::vector<int> alphas = config.cdf_alphas;
  if (alphas.empty()) {
    alphas.resize(static_cast<std::size_t>(k));
    std::iota(alphas.begin(), alphas.end(), 1);
  }
  std::vector<int> betas = config.cdf_betas;
  if (betas.empty()) betas = {1, 2, 3, 5, 10};
  const auto out_of_range = [k](int x) { return x < 1 || x > k; };
  alphas.erase(std::remove_if(alphas.begin(), alphas.end(), out_of_range), alphas.end());
  betas.erase(std::remove_if(betas.begin(), betas.end(), out_of_range), betas.end());

  std::ostringstream cdf;
  cdf << header << "method,alpha,beta,empirical,random\n";
  const std::vector<std::pair<std::string, const std::vector<std::vector<double>>*>> ranked{
      {config.stage1, &stage1_scores}, {config.stage2, &stage2_scores}};
  for (const auto& [name, scores] : ranked) {
    const auto table = empirical_cdf(*scores, truth_vectors, alphas, betas);
    for (std::size_t i = 0; i < alphas.size(); ++i) {
      for (std::size_t j = 0; j < betas.size(); ++j) {
        cdf << name << ',' << alphas[i] << ',' << betas[j] << ',' << format_number(table[i][j]) << ','
            << format_number(random_prune_probability(k, alphas[i], betas[j])) << '\n';
      }
    }
  }
  write_file_atomic(config.output_dir / "analyze" / "cdf.csv", cdf.str());
}

}  // namespace opesel
