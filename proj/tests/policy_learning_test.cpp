#include "opesel/policy_learning.hpp"
#include "opesel/sepsis.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <set>
#include <sstream>

using namespace opesel;
using opesel::testing::tr;

namespace {

// Q_h = r + gamma * P max Q_{h-1} on a dense model, Q_0 = 0.
Eigen::MatrixXd truncated_optimal_q(const TabularMDP& mdp, int horizon) {
  const int n = mdp.n_states(), k = mdp.n_actions();
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(n, k);
  for (int h = 0; h < horizon; ++h) {
    Eigen::MatrixXd next(n, k);
    for (int s = 0; s < n; ++s) {
      for (int a = 0; a < k; ++a) {
        double v = mdp.reward(s, a);
        for (int s2 = 0; s2 < n; ++s2) v += mdp.discount() * mdp.transition(s, a, s2) * q.row(s2).maxCoeff();
        next(s, a) = v;
      }
    }
    q = next;
  }
  return q;
}

TabularMDP deterministic_chain() {
  // Two states, two actions; action 0 stays, action 1 switches.
  TabularMDP mdp(2, 2, 0.5);
  mdp.set_row(0, 0, {{0, 1.0}});
  mdp.set_row(0, 1, {{1, 1.0}});
  mdp.set_row(1, 0, {{1, 1.0}});
  mdp.set_row(1, 1, {{0, 1.0}});
  mdp.set_reward(0, 0, 0.1);
  mdp.set_reward(0, 1, -0.2);
  mdp.set_reward(1, 0, 0.3);
  mdp.set_reward(1, 1, 0.0);
  mdp.set_initial_dist({0.5, 0.5});
  return mdp;
}

nn::NetConfig tiny_net() {
  nn::NetConfig c;
  c.hidden_layers = 1;
  c.hidden_units = 8;
  c.learning_rate = 1e-2;
  c.batch_size = 16;
  c.max_epochs = 3;
  c.patience = 2;
  return c;
}

}  // namespace

TEST(FqiTabular, FirstIterationIsMeanReward) {
  const auto data = opesel::testing::make_dataset({
      tr(0, 1, 0, 1, -1.0, 2, true),
      tr(1, 1, 0, 1, 0.0, 1),
      tr(1, 2, 1, 0, 1.0, 2, true),
  });
  const auto qs = fqi_tabular(data, 3, 2, 1, 0.9);
  ASSERT_EQ(qs.size(), 1u);
  EXPECT_DOUBLE_EQ(qs[0](0, 1), -0.5);
  EXPECT_DOUBLE_EQ(qs[0](1, 0), 1.0);
  EXPECT_EQ(qs[0](0, 0), 0.0);
  EXPECT_EQ(qs[0](2, 1), 0.0);
}

TEST(FqiTabular, DeterministicChainMatchesTruncatedValueIteration) {
  const auto mdp = deterministic_chain();
  const auto data = opesel::testing::exhaustive_dataset(mdp, 1, 1);
  const auto mle = estimate_tabular_mdp(data, 2, 2, 0.5);
  const auto qs = fqi_tabular(data, 2, 2, 12, 0.5);
  for (int h = 1; h <= 12; ++h) {
    const Eigen::MatrixXd ref = truncated_optimal_q(mle, h);
    EXPECT_LT((qs[static_cast<std::size_t>(h - 1)].table - ref).cwiseAbs().maxCoeff(), 1e-9) << "h=" << h;
  }
}

TEST(FqiTabular, StochasticExhaustiveDataMatchesMleOracle) {
  auto mdp = opesel::testing::random_mdp(6, 3, 0.9, 31);
  for (int s = 0; s < 6; ++s)
    for (int a = 0; a < 3; ++a) mdp.set_reward(s, a, 0.1 * mdp.reward(s, a));
  const auto data = opesel::testing::exhaustive_dataset(mdp, 15, 32);
  const auto mle = estimate_tabular_mdp(data, 6, 3, 0.9);
  const auto qs = fqi_tabular(data, 6, 3, 25, 0.9);
  for (int h : {1, 5, 25}) {
    EXPECT_LT((qs[static_cast<std::size_t>(h - 1)].table - truncated_optimal_q(mle, h)).cwiseAbs().maxCoeff(), 1e-9);
  }
  // Convergence toward Q* of the MLE model within gamma^H / (1 - gamma).
  const auto opt = value_iteration(mle, 1e-12);
  EXPECT_LE((qs.back().table - opt.q).cwiseAbs().maxCoeff(), std::pow(0.9, 25) / 0.1);
}

TEST(FqiTabular, ZeroRewardsGiveZeroQ) {
  sepsis::Simulator sim;
  auto data = generate(sim, BehaviorSpec::uniform(), 50, 20, 1);
  std::vector<Transition> zeroed(data.transitions().begin(), data.transitions().end());
  for (auto& t : zeroed) t.reward = 0.0;
  const auto qs = fqi_tabular(opesel::testing::make_dataset(zeroed), sepsis::kNumStates, 8, 5, 0.99);
  for (const auto& q : qs) EXPECT_EQ(q.table.cwiseAbs().maxCoeff(), 0.0);
}

TEST(FqiTabular, TargetsClipped) {
  // A self-loop with reward 1 would exceed 1 without clipping.
  const auto data = opesel::testing::make_dataset({tr(0, 1, 0, 0, 1.0, 0), tr(0, 2, 0, 0, 1.0, 0)});
  const auto qs = fqi_tabular(data, 1, 1, 10, 0.9);
  for (const auto& q : qs) EXPECT_LE(q(0, 0), 1.0);
  EXPECT_EQ(qs.back()(0, 0), 1.0);
}

TEST(Greedy, AffineInvariance) {
  Rng rng(3);
  Eigen::MatrixXd q(10, 8);
  for (int i = 0; i < 10; ++i)
    for (int a = 0; a < 8; ++a) q(i, a) = rng.uniform();
  QFunction f{q, nullptr};
  QFunction g{2.5 * q.array() + 0.75, nullptr};
  EXPECT_EQ(f.greedy(), g.greedy());
}

TEST(Soften, Formula) {
  const std::vector<int> actions{0, 3, 7};
  const auto pi = TabularPolicy::deterministic(actions, 8);
  EXPECT_EQ(soften(pi, 0.0).probs(), pi.probs());
  const auto soft = soften(pi, 0.01);
  EXPECT_DOUBLE_EQ(soft.prob(1, 3), 0.99);
  EXPECT_DOUBLE_EQ(soft.prob(1, 0), 0.01 / 7);
  Rng rng(4);
  for (int k = 0; k < 20; ++k) {
    const auto s = soften(pi, 0.999 * rng.uniform());
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(s.probs().row(i).sum(), 1.0, 1e-12);
  }
  EXPECT_THROW(soften(pi, 1.0), std::invalid_argument);
}

TEST(FqiNeural, ZeroRewardsGiveNearZeroValues) {
  sepsis::Simulator sim;
  auto data = generate(sim, BehaviorSpec::uniform(), 100, 20, 2);
  std::vector<Transition> zeroed(data.transitions().begin(), data.transitions().end());
  for (auto& t : zeroed) t.reward = 0.0;
  nn::NetConfig c = tiny_net();
  c.hidden_units = 16;
  c.max_epochs = 200;
  c.patience = 200;
  const std::vector<int> checkpoints{1, 2};
  const auto qs = fqi_neural(opesel::testing::make_dataset(zeroed), sepsis::feature_matrix(), 8, c, checkpoints, 0.99);
  ASSERT_EQ(qs.size(), 2u);
  for (const auto& q : qs) {
    for (const int s : opesel::testing::make_dataset(zeroed).initial_states()) {
      EXPECT_LT(std::abs(q(s, q.greedy()[static_cast<std::size_t>(s)])), 1e-2);
    }
  }
}

TEST(FqiNeural, OneHotStatesTrackTabular) {
  const auto mdp = deterministic_chain();
  const auto data = opesel::testing::exhaustive_dataset(mdp, 30, 5);
  nn::NetConfig c;
  c.hidden_layers = 1;
  c.hidden_units = 64;
  c.learning_rate = 1e-2;
  c.batch_size = 16;
  c.max_epochs = 200;
  c.patience = 20;
  c.seed = 9;
  const Eigen::MatrixXd features = Eigen::MatrixXd::Identity(2, 2);
  const std::vector<int> checkpoints{1, 3, 5};
  const auto neural = fqi_neural(data, features, 2, c, checkpoints, 0.5);
  const auto tab = fqi_tabular(data, 2, 2, 5, 0.5);
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    const auto& ref = tab[static_cast<std::size_t>(checkpoints[i] - 1)].table;
    EXPECT_LT((neural[i].table - ref).cwiseAbs().maxCoeff(), 0.05) << "iteration " << checkpoints[i];
  }
}

TEST(FqiNeural, CheckpointsArePrefixesOfOneRun) {
  sepsis::Simulator sim;
  const auto data = generate(sim, BehaviorSpec::uniform(), 30, 20, 3);
  nn::NetConfig c = tiny_net();
  c.seed = 11;
  const std::vector<int> all{1, 2, 4};
  const std::vector<int> last{4};
  const std::vector<int> first{2};
  const auto features = sepsis::feature_matrix();
  const auto a = fqi_neural(data, features, 8, c, all, 0.99);
  const auto b = fqi_neural(data, features, 8, c, last, 0.99);
  const auto d = fqi_neural(data, features, 8, c, first, 0.99);
  EXPECT_EQ(a[2].table, b[0].table);
  EXPECT_EQ(a[1].table, d[0].table);
  EXPECT_EQ(a[2].model->net().parameters(), b[0].model->net().parameters());
}

TEST(Candidates, TabularCheckpoints) {
  sepsis::Simulator sim;
  const auto data = generate(sim, BehaviorSpec::uniform(), 200, 20, 4);
  const std::vector<int> iterations{1, 2, 5, 10};
  const auto set = build_tabular_candidates(data, sepsis::kNumStates, 8, iterations, 0.99);
  ASSERT_EQ(set.size(), 4u);
  const auto qs = fqi_tabular(data, sepsis::kNumStates, 8, 10, 0.99);
  std::set<std::string> records;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& c = set.candidates[i];
    EXPECT_EQ(c.q.table, qs[static_cast<std::size_t>(iterations[i] - 1)].table);
    EXPECT_EQ(c.actions, qs[static_cast<std::size_t>(iterations[i] - 1)].greedy());
    records.insert(c.hyperparams());
  }
  EXPECT_EQ(records.size(), 4u);
  EXPECT_EQ(set.candidates[2].hyperparams(), "tabular;iteration=5");
  EXPECT_EQ(set.candidates[0].id, "p000");
}

TEST(Candidates, GridArithmeticAndDeterminism) {
  sepsis::Simulator sim;
  const auto data = generate(sim, BehaviorSpec::uniform(), 10, 20, 5);
  HyperGrid grid;
  EXPECT_EQ(grid.size(), 96u);
  EXPECT_EQ(grid.n_runs(), 16u);
  grid.hidden_units = {2, 3, 4, 5};
  nn::NetConfig base = tiny_net();
  base.max_epochs = 1;
  const auto features = sepsis::feature_matrix();
  const auto set = build_candidates(data, features, 8, grid, base, 21, 0.99, 2);
  ASSERT_EQ(set.size(), 96u);
  std::set<std::string> records;
  std::set<std::tuple<int, int, double>> runs;
  for (const auto& c : set.candidates) {
    records.insert(c.hyperparams());
    runs.insert({c.hidden_layers, c.hidden_units, c.learning_rate});
  }
  EXPECT_EQ(records.size(), 96u);
  EXPECT_EQ(runs.size(), 16u);

  grid.hidden_layers = {1};
  grid.hidden_units = {3};
  grid.learning_rates = {1e-3};
  grid.fqi_iterations = {1, 2};
  const auto a = build_candidates(data, features, 8, grid, base, 5, 0.99, 1);
  const auto b = build_candidates(data, features, 8, grid, base, 5, 0.99, 2);
  ASSERT_EQ(a.size(), 2u);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.candidates[i].actions, b.candidates[i].actions);
}

TEST(Candidates, ManifestRoundTrip) {
  sepsis::Simulator sim;
  const auto data = generate(sim, BehaviorSpec::uniform(), 20, 20, 6);
  HyperGrid grid;
  grid.hidden_layers = {1};
  grid.hidden_units = {3};
  grid.learning_rates = {1e-3};
  grid.fqi_iterations = {1, 2};
  const auto neural = build_candidates(data, sepsis::feature_matrix(), 8, grid, tiny_net(), 7, 0.99);
  const std::vector<int> iterations{1, 3};
  const auto tabular = build_tabular_candidates(data, sepsis::kNumStates, 8, iterations, 0.99);

  const auto dir = std::filesystem::temp_directory_path() / "opesel_manifest_test";
  std::filesystem::remove_all(dir);
  for (const auto* set : {&neural, &tabular}) {
    const auto path = dir / (set == &neural ? "neural.csv" : "tabular.csv");
    save_candidates(*set, path, "note");
    const auto back = load_candidates(path);
    ASSERT_EQ(back.size(), set->size());
    EXPECT_EQ(back.seed, set->seed);
    for (std::size_t i = 0; i < set->size(); ++i) {
      EXPECT_EQ(back.candidates[i].id, set->candidates[i].id);
      EXPECT_EQ(back.candidates[i].hyperparams(), set->candidates[i].hyperparams());
      EXPECT_EQ(back.candidates[i].q.table, set->candidates[i].q.table);
      EXPECT_EQ(back.candidates[i].actions, set->candidates[i].actions);
      EXPECT_EQ(static_cast<bool>(back.candidates[i].q.model), static_cast<bool>(set->candidates[i].q.model));
    }
  }
}

TEST(QTable, TextRoundTripExact) {
  Eigen::MatrixXd q(2, 3);
  q << 1.0 / 3.0, -0.1, 0.0, 1e-17, -1.0, 0.7;
  std::stringstream buf;
  write_qtable(buf, q);
  EXPECT_EQ(read_qtable(buf), q);
}
