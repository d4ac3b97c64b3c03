#include "opesel/ope.hpp"
#include "opesel/sepsis.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

using namespace opesel;
using opesel::testing::tr;

namespace {

// Three states, two actions, episodes of length one or two.
Dataset hand_dataset() {
  return opesel::testing::make_dataset({
      tr(0, 1, 0, 0, 0.0, 1),
      tr(0, 2, 1, 1, 1.0, 2, true),
      tr(1, 1, 0, 1, -1.0, 2, true),
      tr(2, 1, 0, 0, 0.5, 1),
      tr(2, 2, 1, 0, 0.0, 2, true),
  });
}

TabularPolicy probs(std::initializer_list<std::initializer_list<double>> rows) {
  Eigen::MatrixXd p(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& row : rows) {
    Eigen::Index j = 0;
    for (double x : row) p(i, j++) = x;
    ++i;
  }
  return TabularPolicy(p);
}

// Per-decision weighted IS, written from the definition: w_t averages the
// cumulative ratios over all episodes, freezing each at its last step.
double per_decision_wis(const Dataset& d, const TabularPolicy& target, const TabularPolicy& behavior,
                        double gamma) {
  const std::size_t m = d.n_episodes();
  const int T = d.max_episode_length();
  std::vector<std::vector<double>> rho(m, std::vector<double>(static_cast<std::size_t>(T) + 1, 1.0));
  for (std::size_t j = 0; j < m; ++j) {
    const auto ep = d.episode(j);
    for (int t = 1; t <= T; ++t) {
      double r = rho[j][static_cast<std::size_t>(t - 1)];
      if (static_cast<std::size_t>(t) <= ep.size()) {
        const auto& x = ep[static_cast<std::size_t>(t - 1)];
        r *= target.prob(x.state, x.action) / behavior.prob(x.state, x.action);
      }
      rho[j][static_cast<std::size_t>(t)] = r;
    }
  }
  double total = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    const auto ep = d.episode(j);
    for (std::size_t k = 0; k < ep.size(); ++k) {
      double w = 0.0;
      for (std::size_t i = 0; i < m; ++i) w += rho[i][k + 1] / static_cast<double>(m);
      total += rho[j][k + 1] / w * std::pow(gamma, static_cast<double>(k)) * ep[k].reward;
    }
  }
  return total / static_cast<double>(m);
}

}  // namespace

TEST(Wis, BehaviorPolicyGivesMeanReturn) {
  sepsis::Simulator sim;
  const auto d = generate(sim, BehaviorSpec::uniform(), 300, 20, 1);
  const auto uniform = TabularPolicy::uniform(sepsis::kNumStates, 8);
  const auto est = wis(d, uniform, uniform, 0.0, 0.99);
  const auto returns = episode_returns(d, 0.99);
  double mean = 0.0;
  for (double g : returns) mean += g;
  mean /= static_cast<double>(returns.size());
  EXPECT_DOUBLE_EQ(est.value, mean);
  EXPECT_DOUBLE_EQ(est.diagnostic("ess"), 300.0);
}

TEST(Wis, HandExample) {
  // Behavior uniform over two actions; target always takes action 0.
  const auto d = opesel::testing::make_dataset({tr(0, 1, 0, 0, 1.0, 1, true), tr(1, 1, 0, 1, -1.0, 1, true)});
  const std::vector<int> zero{0, 0};
  const auto est = wis(d, TabularPolicy::deterministic(zero, 2), TabularPolicy::uniform(2, 2), 0.0, 0.9);
  EXPECT_EQ(est.value, 1.0);
  EXPECT_EQ(est.diagnostic("zero_weight_episodes"), 1.0);
  EXPECT_EQ(est.diagnostic("ess"), 1.0);
}

TEST(Wis, FullDisagreementIsUndefined) {
  const auto d = opesel::testing::make_dataset({tr(0, 1, 0, 1, 1.0, 1, true), tr(1, 1, 0, 1, -1.0, 1, true)});
  const std::vector<int> zero{0, 0};
  EXPECT_THROW(wis(d, TabularPolicy::deterministic(zero, 2), TabularPolicy::uniform(2, 2), 0.0, 0.9),
               UndefinedEstimate);
  // Softening restores a defined estimate.
  EXPECT_NO_THROW(wis(d, TabularPolicy::deterministic(zero, 2), TabularPolicy::uniform(2, 2), 0.1, 0.9));
}

TEST(Wis, ConvexHullOfReturns) {
  sepsis::Simulator sim;
  const auto d = generate(sim, BehaviorSpec::uniform(), 200, 20, 2);
  const auto returns = episode_returns(d, 0.99);
  const auto [lo, hi] = std::minmax_element(returns.begin(), returns.end());
  const auto behavior = estimate_tabular_behavior(d, sepsis::kNumStates, 8);
  Rng rng(3);
  for (int k = 0; k < 30; ++k) {
    std::vector<int> actions(sepsis::kNumStates);
    for (auto& a : actions) a = rng.uniform_int(8);
    const double eps = std::vector<double>{0.0, 0.01, 0.1, 0.5}[static_cast<std::size_t>(k % 4)];
    try {
      const auto est = wis(d, TabularPolicy::deterministic(actions, 8), behavior, eps, 0.99);
      EXPECT_GE(est.value, *lo - 1e-12);
      EXPECT_LE(est.value, *hi + 1e-12);
    } catch (const UndefinedEstimate&) {
      EXPECT_EQ(eps, 0.0);
    }
  }
}

TEST(ImportanceWeights, FrozenAfterEpisodeEnd) {
  const auto d = hand_dataset();
  const auto target = probs({{0.25, 0.75}, {0.5, 0.5}, {0.5, 0.5}});
  const auto w = importance_weights(d, target, TabularPolicy::uniform(3, 2));
  ASSERT_EQ(w.cumulative.cols(), 3);
  EXPECT_DOUBLE_EQ(w.cumulative(1, 1), 1.5);
  EXPECT_DOUBLE_EQ(w.cumulative(1, 2), 1.5);
  EXPECT_DOUBLE_EQ(w.cumulative(0, 2), 0.5);
  EXPECT_DOUBLE_EQ(w.average(2), (0.5 + 1.5 + 0.5) / 3.0);
}

TEST(ImportanceWeights, ZeroBehaviorProbabilityIsAnError) {
  const auto d = opesel::testing::make_dataset({tr(0, 1, 0, 1, 0.0, 1, true)});
  const std::vector<int> zero{0, 0};
  EXPECT_THROW(importance_weights(d, TabularPolicy::uniform(2, 2), TabularPolicy::deterministic(zero, 2)),
               std::invalid_argument);
}

TEST(Wdr, ZeroQIsPerDecisionWis) {
  const auto d = hand_dataset();
  const auto behavior = probs({{0.5, 0.5}, {0.25, 0.75}, {0.5, 0.5}});
  const std::vector<int> actions{0, 1, 0};
  const auto pi = TabularPolicy::deterministic(actions, 2);
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(3, 2);
  for (double eps : {0.1, 0.3}) {
    const auto est = wdr(d, pi, behavior, eps, zero, 0.9);
    EXPECT_NEAR(est.value, per_decision_wis(d, soften(pi, eps), behavior, 0.9), 1e-15);
  }
}

TEST(Wdr, HandComputedTerms) {
  // Behavior = target (uniform), so every weight ratio is 1 and
  // G = sum_t [gamma^{t-1} r_t - Q(s_t, a_t) + V(s_t)].
  const auto d = hand_dataset();
  const auto uniform = TabularPolicy::uniform(3, 2);
  Eigen::MatrixXd q(3, 2);
  q << 0.2, -0.4, 0.6, 1.0, 0.0, 0.0;
  // V = (-0.1, 0.8, 0).
  const double g0 = (0.0 - 0.2 + -0.1) + (0.9 * 1.0 - 1.0 + 0.8);
  const double g1 = (-1.0 + 0.4 + -0.1);
  const double g2 = (0.5 - 0.2 + -0.1) + (0.0 - 0.6 + 0.8);
  EXPECT_NEAR(wdr(d, uniform, uniform, 0.0, q, 0.9).value, (g0 + g1 + g2) / 3.0, 1e-15);
}

TEST(Wdr, SkipsZeroWeightHorizons) {
  const auto d = opesel::testing::make_dataset({tr(0, 1, 0, 1, 1.0, 1, true)});
  const std::vector<int> zero{0, 0};
  const auto est = wdr(d, TabularPolicy::deterministic(zero, 2), TabularPolicy::uniform(2, 2), 0.0,
                       Eigen::MatrixXd::Zero(2, 2), 0.9);
  EXPECT_EQ(est.diagnostic("skipped_terms"), 1.0);
  EXPECT_TRUE(std::isfinite(est.value));
}

TEST(Fqe, TabularEqualsTruncatedEvaluationOfMle) {
  auto mdp = opesel::testing::random_mdp(7, 3, 0.9, 41);
  for (int s = 0; s < 7; ++s)
    for (int a = 0; a < 3; ++a) mdp.set_reward(s, a, 0.1 * mdp.reward(s, a));
  const auto d = opesel::testing::exhaustive_dataset(mdp, 12, 42);
  const auto mle = estimate_tabular_mdp(d, 7, 3, 0.9);
  const auto pi = opesel::testing::random_policy(7, 3, 43);
  for (int h : {1, 4, 20}) {
    const auto fqe = fqe_tabular(d, pi, h, 0.9);
    const auto ref = evaluate_policy_iterative(mle, pi, h);
    EXPECT_LT((fqe.q.table - ref.q).cwiseAbs().maxCoeff(), 1e-9) << "H=" << h;
  }
}

TEST(Fqe, EstimateAveragesInitialStates) {
  const auto d = hand_dataset();
  const auto pi = TabularPolicy::uniform(3, 2);
  const auto fqe = fqe_tabular(d, pi, 3, 0.9);
  const double v0 = 0.5 * (fqe.q.table(0, 0) + fqe.q.table(0, 1));
  EXPECT_DOUBLE_EQ(fqe.estimate.value, v0);
  EXPECT_EQ(fqe.estimate.hyperparams, "H=3");
}

TEST(Fqe, NeuralTracksTabularOnOneHotStates) {
  TabularMDP mdp(2, 2, 0.5);
  mdp.set_row(0, 0, {{0, 1.0}});
  mdp.set_row(0, 1, {{1, 1.0}});
  mdp.set_row(1, 0, {{1, 1.0}});
  mdp.set_row(1, 1, {{0, 1.0}});
  mdp.set_reward(0, 0, 0.1);
  mdp.set_reward(0, 1, -0.2);
  mdp.set_reward(1, 0, 0.3);
  mdp.set_reward(1, 1, 0.0);
  const auto d = opesel::testing::exhaustive_dataset(mdp, 30, 2);
  nn::NetConfig c;
  c.hidden_units = 64;
  c.learning_rate = 1e-2;
  c.batch_size = 16;
  c.max_epochs = 200;
  c.patience = 20;
  c.seed = 3;
  const auto pi = probs({{0.3, 0.7}, {0.6, 0.4}});
  const auto neural = fqe_neural(d, Eigen::MatrixXd::Identity(2, 2), pi, 4, c, 0.5);
  const auto tab = fqe_tabular(d, pi, 4, 0.5);
  EXPECT_LT((neural.q.table - tab.q.table).cwiseAbs().maxCoeff(), 0.05);
  EXPECT_NEAR(neural.estimate.value, tab.estimate.value, 0.05);
}

TEST(Am, ExhaustiveDeterministicDataRecoversTruth) {
  TabularMDP mdp(4, 2, 0.9);
  mdp.set_row(0, 0, {{1, 1.0}});
  mdp.set_row(0, 1, {{2, 1.0}});
  mdp.set_row(1, 0, {{3, 1.0}});
  mdp.set_row(1, 1, {{0, 1.0}});
  mdp.set_row(2, 0, {{3, 1.0}});
  mdp.set_row(2, 1, {{3, 1.0}});
  mdp.set_reward(0, 0, 0.0);
  mdp.set_reward(0, 1, 0.0);
  mdp.set_reward(1, 0, 1.0);
  mdp.set_reward(1, 1, 0.0);
  mdp.set_reward(2, 0, -1.0);
  mdp.set_reward(2, 1, 0.5);
  mdp.make_absorbing(3);
  mdp.set_initial_dist({1.0, 0.0, 0.0, 0.0});

  std::vector<Transition> ts;
  int ep = 0;
  for (int s = 0; s < 3; ++s)
    for (int a = 0; a < 2; ++a) ts.push_back(tr(ep++, 1, s, a, mdp.reward(s, a), mdp.row(s, a)[0].next));
  // Initial-state distribution is estimated from episode starts, so add a point mass at 0.
  std::vector<Transition> starts;
  for (const auto& t : ts) {
    if (t.state == 0) starts.push_back(t);
  }
  ep = 0;
  for (auto& t : starts) t.episode_id = ep++;
  for (const auto& t : ts) {
    if (t.state != 0) {
      starts.push_back(t);
      starts.back().episode_id = ep++;
    }
  }
  const auto d = opesel::testing::make_dataset(starts);
  const auto model = estimate_tabular_mdp(d, 4, 2, 0.9);

  const auto pi = probs({{0.5, 0.5}, {0.2, 0.8}, {0.1, 0.9}, {0.5, 0.5}});
  auto mu = model.initial_dist();
  // The estimated start distribution puts mass on every logged start; compare state 0 values.
  const auto est_v = evaluate_policy_analytic(model, pi).v;
  const auto true_v = evaluate_policy_analytic(mdp, pi).v;
  EXPECT_NEAR(est_v(0), true_v(0), 1e-9);
  double expected = 0.0;
  for (int s = 0; s < 4; ++s) expected += mu[static_cast<std::size_t>(s)] * true_v(s);
  EXPECT_NEAR(am_tabular(model, pi).value, expected, 1e-9);
}

TEST(Am, UnseenPairsGiveZero) {
  // A single truncated zero-reward step: every other pair falls back to a
  // zero-reward self-loop.
  const auto d = opesel::testing::make_dataset({tr(0, 1, 0, 0, 0.0, 1)});
  const auto model = estimate_tabular_mdp(d, 3, 2, 0.9);
  EXPECT_EQ(am_tabular(model, TabularPolicy::uniform(3, 2)).value, 0.0);
}

TEST(Am, RolloutWithConstantModels) {
  // Zero state change and constant reward 0.2: value = 0.2 * (1 - g^H) / (1 - g).
  nn::Mlp delta(3 + 2, {4}, 3);
  nn::Mlp reward(3 + 2, {4}, 1);
  reward.parameters()(reward.parameters().size() - 1) = 0.2;
  AmRegressors models{nn::Model(delta, nn::OutputKind::linear, {}), nn::Model(reward, nn::OutputKind::linear, {})};
  Eigen::MatrixXd init(2, 3);
  init << 1, 0, 0, 0, 1, 0;
  const auto est = am_rollout(models, [](const Eigen::VectorXd&) { return 1; }, 2, 5, init, 0.9);
  EXPECT_NEAR(est.value, 0.2 * (1 - std::pow(0.9, 5)) / 0.1, 1e-12);
  EXPECT_EQ(est.hyperparams, "H=5");
}

TEST(Am, RolloutFollowsPredictedDeltas) {
  // delta adds 1 to the first feature; reward equals the first feature.
  nn::Mlp delta(1 + 1, {}, 1);
  delta.parameters() << 0.0, 0.0, 1.0;
  nn::Mlp reward(1 + 1, {}, 1);
  reward.parameters() << 1.0, 0.0, 0.0;
  AmRegressors models{nn::Model(delta, nn::OutputKind::linear, {}), nn::Model(reward, nn::OutputKind::linear, {})};
  Eigen::MatrixXd init(1, 1);
  init << 0.5;
  const auto est = am_rollout(models, [](const Eigen::VectorXd&) { return 0; }, 1, 3, init, 0.5);
  // Rewards 0.5, 1.5, 2.5 discounted by 1, 0.5, 0.25.
  EXPECT_NEAR(est.value, 0.5 + 0.75 + 0.625, 1e-12);
}

TEST(Baselines, RmsTdeHandValues) {
  const auto d = hand_dataset();
  Eigen::MatrixXd q(3, 2);
  q << 0.2, -0.4, 0.6, 1.0, 0.0, 0.0;
  const std::vector<int> actions{0, 1, 0};
  const auto pi = TabularPolicy::deterministic(actions, 2);
  // V(1) = Q(1, 1) = 1; deltas: 0 + 0.9 - 0.2, 1 - 1, -1 + 0.4, 0.5 + 0.9 - 0.2, 0 - 0.6.
  const double sq = 0.7 * 0.7 + 0.0 + 0.6 * 0.6 + 1.2 * 1.2 + 0.6 * 0.6;
  EXPECT_NEAR(rms_tde(d, pi, q, 0.9), std::sqrt(sq / 5.0), 1e-15);
}

TEST(Baselines, FqiValueScore) {
  const auto d = hand_dataset();
  Eigen::MatrixXd q(3, 2);
  q << 0.2, -0.4, 0.6, 1.0, 0.0, 0.0;
  const std::vector<int> actions{1, 1, 0};
  EXPECT_DOUBLE_EQ(fqi_value_score(q, TabularPolicy::deterministic(actions, 2), d).value, -0.4);
}

TEST(Estimate, ReportedIsClippedAndScoreHandlesUndefined) {
  OpeEstimate e;
  e.value = 1.7;
  EXPECT_EQ(e.reported(), 1.0);
  EXPECT_EQ(e.score(), 1.7);
  e.defined = false;
  EXPECT_EQ(e.score(), -std::numeric_limits<double>::infinity());
}

TEST(BehaviorClassifier, UniformLogsNearUniform) {
  sepsis::Simulator sim;
  const auto d = generate(sim, BehaviorSpec::uniform(), 400, 20, 8);
  nn::NetConfig c;
  c.hidden_units = 16;
  c.learning_rate = 1e-3;
  c.max_epochs = 30;
  c.seed = 1;
  const auto pi = estimate_behavior_classifier(d, sepsis::feature_matrix(), 8, c);
  EXPECT_NO_THROW(pi.validate(1e-6));
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(8);
  for (const auto& t : d.transitions()) mean += pi.probs().row(t.state).transpose();
  mean /= static_cast<double>(d.n_transitions());
  for (int a = 0; a < 8; ++a) EXPECT_NEAR(mean(a), 0.125, 0.05);
}
