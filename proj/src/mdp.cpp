#include "opesel/mdp.hpp"

#include "opesel/dataset.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <map>

namespace opesel {

TabularMDP::TabularMDP(int n_states, int n_actions, double discount)
    : n_states_(n_states),
      n_actions_(n_actions),
      discount_(discount),
      rows_(static_cast<std::size_t>(n_states) * static_cast<std::size_t>(n_actions)),
      reward_(rows_.size(), 0.0),
      initial_dist_(static_cast<std::size_t>(n_states), 0.0),
      absorbing_(static_cast<std::size_t>(n_states), false) {
  if (n_states <= 0 || n_actions <= 0) {
    throw std::invalid_argument("TabularMDP: state and action counts must be positive");
  }
  if (!(discount >= 0.0 && discount <= 1.0)) {
    throw std::invalid_argument("TabularMDP: discount must lie in [0, 1]");
  }
}

TabularMDP TabularMDP::from_dense(int n_states, int n_actions, double discount,
                                  std::span<const double> transition,
                                  std::span<const double> reward,
                                  std::span<const double> initial_dist,
                                  std::vector<bool> absorbing) {
  TabularMDP mdp(n_states, n_actions, discount);
  const auto ns = static_cast<std::size_t>(n_states);
  if (transition.size() != ns * ns * static_cast<std::size_t>(n_actions) ||
      reward.size() != ns * static_cast<std::size_t>(n_actions) || initial_dist.size() != ns) {
    throw std::invalid_argument("TabularMDP::from_dense: inconsistent sizes");
  }
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) {
      std::vector<Outcome> row;
      const auto base = mdp.index(s, a) * ns;
      for (int n = 0; n < n_states; ++n) {
        if (transition[base + static_cast<std::size_t>(n)] > 0.0) {
          row.push_back({n, transition[base + static_cast<std::size_t>(n)]});
        }
      }
      mdp.set_row(s, a, std::move(row));
      mdp.set_reward(s, a, reward[mdp.index(s, a)]);
    }
  }
  mdp.set_initial_dist({initial_dist.begin(), initial_dist.end()});
  for (std::size_t s = 0; s < absorbing.size(); ++s) {
    if (absorbing[s]) mdp.make_absorbing(static_cast<int>(s));
  }
  return mdp;
}

void TabularMDP::set_row(int s, int a, std::vector<Outcome> outcomes) {
  std::sort(outcomes.begin(), outcomes.end(),
            [](const Outcome& x, const Outcome& y) { return x.next < y.next; });
  // merge duplicates
  std::vector<Outcome> merged;
  for (const auto& o : outcomes) {
    if (o.next < 0 || o.next >= n_states_) {
      throw std::invalid_argument("TabularMDP::set_row: next state out of range");
    }
    if (!merged.empty() && merged.back().next == o.next) {
      merged.back().prob += o.prob;
    } else {
      merged.push_back(o);
    }
  }
  rows_[index(s, a)] = std::move(merged);
}

double TabularMDP::transition(int s, int a, int next) const {
  const auto r = row(s, a);
  auto it = std::lower_bound(r.begin(), r.end(), next,
                             [](const Outcome& o, int n) { return o.next < n; });
  return (it != r.end() && it->next == next) ? it->prob : 0.0;
}

void TabularMDP::set_initial_dist(std::vector<double> dist) {
  if (dist.size() != static_cast<std::size_t>(n_states_)) {
    throw std::invalid_argument("TabularMDP: initial distribution has wrong length");
  }
  initial_dist_ = std::move(dist);
}

void TabularMDP::make_absorbing(int s) {
  absorbing_[static_cast<std::size_t>(s)] = true;
  for (int a = 0; a < n_actions_; ++a) {
    rows_[index(s, a)] = {{s, 1.0}};
    reward_[index(s, a)] = 0.0;
  }
}

void TabularMDP::validate(double tolerance) const {
  for (int s = 0; s < n_states_; ++s) {
    for (int a = 0; a < n_actions_; ++a) {
      double total = 0.0;
      for (const auto& o : row(s, a)) {
        if (o.prob < 0.0 || o.prob > 1.0 + tolerance) {
          throw std::invalid_argument("TabularMDP: probability outside [0, 1] at (" +
                                      std::to_string(s) + ", " + std::to_string(a) + ")");
        }
        total += o.prob;
      }
      if (std::abs(total - 1.0) > tolerance) {
        throw std::invalid_argument("TabularMDP: row (" + std::to_string(s) + ", " +
                                    std::to_string(a) + ") sums to " + std::to_string(total));
      }
      if (absorbing(s) && (transition(s, a, s) != 1.0 || reward(s, a) != 0.0)) {
        throw std::invalid_argument("TabularMDP: absorbing state " + std::to_string(s) +
                                    " is not a zero-reward self-loop");
      }
    }
  }
  double mass = 0.0;
  for (double p : initial_dist_) {
    if (p < 0.0) throw std::invalid_argument("TabularMDP: negative initial probability");
    mass += p;
  }
  if (std::abs(mass - 1.0) > tolerance) {
    throw std::invalid_argument("TabularMDP: initial distribution sums to " +
                                std::to_string(mass));
  }
}

TabularPolicy::TabularPolicy(Eigen::MatrixXd action_probs) : probs_(std::move(action_probs)) {}

TabularPolicy TabularPolicy::uniform(int n_states, int n_actions) {
  return TabularPolicy(Eigen::MatrixXd::Constant(n_states, n_actions, 1.0 / n_actions));
}

TabularPolicy TabularPolicy::deterministic(std::span<const int> actions, int n_actions) {
  Eigen::MatrixXd probs = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(actions.size()),
                                                n_actions);
  for (std::size_t s = 0; s < actions.size(); ++s) {
    if (actions[s] < 0 || actions[s] >= n_actions) {
      throw std::invalid_argument("TabularPolicy::deterministic: action out of range");
    }
    probs(static_cast<Eigen::Index>(s), actions[s]) = 1.0;
  }
  return TabularPolicy(std::move(probs));
}

int TabularPolicy::greedy_action(int s) const {
  int best = 0;
  for (int a = 1; a < n_actions(); ++a) {
    if (probs_(s, a) > probs_(s, best)) best = a;
  }
  return best;
}

void TabularPolicy::validate(double tolerance) const {
  for (Eigen::Index s = 0; s < probs_.rows(); ++s) {
    if ((probs_.row(s).array() < 0.0).any() || (probs_.row(s).array() > 1.0 + tolerance).any()) {
      throw std::invalid_argument("TabularPolicy: probability outside [0, 1] in row " +
                                  std::to_string(s));
    }
    if (std::abs(probs_.row(s).sum() - 1.0) > tolerance) {
      throw std::invalid_argument("TabularPolicy: row " + std::to_string(s) +
                                  " does not sum to 1");
    }
  }
}

namespace {

void check_compatible(const TabularMDP& mdp, const TabularPolicy& policy) {
  if (policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions()) {
    throw std::invalid_argument("policy and MDP dimensions differ");
  }
}

// q(s, a) = r(s, a) + gamma * sum_s' p(s'|s,a) v(s'); zero on absorbing states.
Eigen::MatrixXd backup_q(const TabularMDP& mdp, const Eigen::VectorXd& v) {
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(mdp.n_states(), mdp.n_actions());
  for (int s = 0; s < mdp.n_states(); ++s) {
    if (mdp.absorbing(s)) continue;
    for (int a = 0; a < mdp.n_actions(); ++a) {
      double expected = 0.0;
      for (const auto& o : mdp.row(s, a)) expected += o.prob * v(o.next);
      q(s, a) = mdp.reward(s, a) + mdp.discount() * expected;
    }
  }
  return q;
}

Eigen::VectorXd state_values(const Eigen::MatrixXd& q, const TabularPolicy& policy) {
  return (q.array() * policy.probs().array()).rowwise().sum();
}

double initial_value(const TabularMDP& mdp, const Eigen::VectorXd& v) {
  double total = 0.0;
  for (int s = 0; s < mdp.n_states(); ++s) total += mdp.initial_dist()[static_cast<std::size_t>(s)] * v(s);
  return total;
}

// With gamma = 1, (I - P_pi) restricted to non-absorbing states is invertible
// iff every state reaches the absorbing set under pi.
bool reaches_absorbing_everywhere(const TabularMDP& mdp, const TabularPolicy& policy) {
  const int n = mdp.n_states();
  std::vector<std::vector<int>> predecessors(static_cast<std::size_t>(n));
  for (int s = 0; s < n; ++s) {
    if (mdp.absorbing(s)) continue;
    for (int a = 0; a < mdp.n_actions(); ++a) {
      if (policy.prob(s, a) <= 0.0) continue;
      for (const auto& o : mdp.row(s, a)) {
        if (o.prob > 0.0) predecessors[static_cast<std::size_t>(o.next)].push_back(s);
      }
    }
  }
  std::vector<bool> reached(static_cast<std::size_t>(n), false);
  std::vector<int> frontier;
  for (int s = 0; s < n; ++s) {
    if (mdp.absorbing(s)) {
      reached[static_cast<std::size_t>(s)] = true;
      frontier.push_back(s);
    }
  }
  while (!frontier.empty()) {
    const int s = frontier.back();
    frontier.pop_back();
    for (int p : predecessors[static_cast<std::size_t>(s)]) {
      if (!reached[static_cast<std::size_t>(p)]) {
        reached[static_cast<std::size_t>(p)] = true;
        frontier.push_back(p);
      }
    }
  }
  return std::all_of(reached.begin(), reached.end(), [](bool r) { return r; });
}

}  // namespace

ValueFunctions evaluate_policy_analytic(const TabularMDP& mdp, const TabularPolicy& policy) {
  check_compatible(mdp, policy);
  const double gamma = mdp.discount();
  if (gamma >= 1.0 && !reaches_absorbing_everywhere(mdp, policy)) {
    throw EvaluationInfeasible(
        "evaluate_policy_analytic: undiscounted chain has a recurrent non-absorbing class");
  }

  // Compact indexing over non-absorbing states.
  std::vector<int> local(static_cast<std::size_t>(mdp.n_states()), -1);
  int n_live = 0;
  for (int s = 0; s < mdp.n_states(); ++s) {
    if (!mdp.absorbing(s)) local[static_cast<std::size_t>(s)] = n_live++;
  }

  ValueFunctions out;
  out.v = Eigen::VectorXd::Zero(mdp.n_states());
  if (n_live > 0) {
    // setFromTriplets sums duplicate entries.
    std::vector<Eigen::Triplet<double>> triplets;
    Eigen::VectorXd r_pi = Eigen::VectorXd::Zero(n_live);
    for (int s = 0; s < mdp.n_states(); ++s) {
      const int i = local[static_cast<std::size_t>(s)];
      if (i < 0) continue;
      triplets.emplace_back(i, i, 1.0);
      for (int a = 0; a < mdp.n_actions(); ++a) {
        const double pa = policy.prob(s, a);
        if (pa == 0.0) continue;
        r_pi(i) += pa * mdp.reward(s, a);
        for (const auto& o : mdp.row(s, a)) {
          const int j = local[static_cast<std::size_t>(o.next)];
          if (j >= 0) triplets.emplace_back(i, j, -gamma * pa * o.prob);
        }
      }
    }
    Eigen::SparseMatrix<double> system(n_live, n_live);
    system.setFromTriplets(triplets.begin(), triplets.end());
    system.makeCompressed();

    Eigen::SparseLU<Eigen::SparseMatrix<double>> solver;
    solver.compute(system);
    if (solver.info() != Eigen::Success) {
      throw EvaluationInfeasible("evaluate_policy_analytic: singular linear system");
    }
    const Eigen::VectorXd v_live = solver.solve(r_pi);
    if (solver.info() != Eigen::Success || !v_live.allFinite()) {
      throw EvaluationInfeasible("evaluate_policy_analytic: linear solve failed");
    }
    for (int s = 0; s < mdp.n_states(); ++s) {
      const int i = local[static_cast<std::size_t>(s)];
      if (i >= 0) out.v(s) = v_live(i);
    }
  }
  out.q = backup_q(mdp, out.v);
  out.scalar_value = initial_value(mdp, out.v);
  return out;
}

ValueFunctions evaluate_policy_iterative(const TabularMDP& mdp, const TabularPolicy& policy,
                                         int horizon) {
  check_compatible(mdp, policy);
  if (horizon < 0) throw std::invalid_argument("evaluate_policy_iterative: negative horizon");
  ValueFunctions out;
  out.v = Eigen::VectorXd::Zero(mdp.n_states());
  out.q = Eigen::MatrixXd::Zero(mdp.n_states(), mdp.n_actions());
  for (int h = 0; h < horizon; ++h) {
    out.q = backup_q(mdp, out.v);
    out.v = state_values(out.q, policy);
  }
  out.scalar_value = initial_value(mdp, out.v);
  return out;
}

std::vector<int> greedy_actions(const Eigen::MatrixXd& q) {
  std::vector<int> actions(static_cast<std::size_t>(q.rows()), 0);
  for (Eigen::Index s = 0; s < q.rows(); ++s) {
    int best = 0;
    for (Eigen::Index a = 1; a < q.cols(); ++a) {
      if (q(s, a) > q(s, best)) best = static_cast<int>(a);
    }
    actions[static_cast<std::size_t>(s)] = best;
  }
  return actions;
}

OptimalSolution value_iteration(const TabularMDP& mdp, double tolerance, int max_iterations) {
  if (!(tolerance > 0.0)) throw std::invalid_argument("value_iteration: tolerance must be > 0");
  const double gamma = mdp.discount();
  // Stop when successive iterates differ by at most this much; for gamma < 1
  // that bounds the distance to Q* by `tolerance`.
  const double step_tolerance = gamma < 1.0 ? tolerance * (1.0 - gamma) / std::max(gamma, 1e-12)
                                            : tolerance;
  OptimalSolution out;
  Eigen::VectorXd v = Eigen::VectorXd::Zero(mdp.n_states());
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(mdp.n_states(), mdp.n_actions());
  double change = 0.0;
  for (int it = 1; it <= max_iterations; ++it) {
    Eigen::MatrixXd next = backup_q(mdp, v);
    change = (next - q).cwiseAbs().maxCoeff();
    q = std::move(next);
    v = q.rowwise().maxCoeff();
    if (change <= step_tolerance) {
      out.iterations = it;
      out.q = q;
      out.residual = (backup_q(mdp, v) - q).cwiseAbs().maxCoeff();
      out.greedy = greedy_actions(q);
      out.policy = TabularPolicy::deterministic(out.greedy, mdp.n_actions());
      return out;
    }
  }
  throw ConvergenceError("value_iteration: no convergence after " +
                             std::to_string(max_iterations) + " sweeps (residual " +
                             std::to_string(change) + ")",
                         change);
}

TabularMDP estimate_tabular_mdp(const Dataset& dataset, int n_states, int n_actions,
                                double discount) {
  if (dataset.empty()) throw std::invalid_argument("estimate_tabular_mdp: empty dataset");
  TabularMDP mdp(n_states, n_actions, discount);
  const auto na = static_cast<std::size_t>(n_actions);
  std::vector<std::map<int, double>> next_counts(static_cast<std::size_t>(n_states) * na);
  std::vector<double> pair_counts(next_counts.size(), 0.0);
  std::vector<double> reward_sums(next_counts.size(), 0.0);
  std::vector<bool> visited(static_cast<std::size_t>(n_states), false);

  for (const auto& tr : dataset.transitions()) {
    if (tr.state < 0 || tr.state >= n_states || tr.next_state < 0 || tr.next_state >= n_states ||
        tr.action < 0 || tr.action >= n_actions) {
      throw std::invalid_argument("estimate_tabular_mdp: transition out of range");
    }
    const auto i = static_cast<std::size_t>(tr.state) * na + static_cast<std::size_t>(tr.action);
    next_counts[i][tr.next_state] += 1.0;
    pair_counts[i] += 1.0;
    reward_sums[i] += tr.reward;
    visited[static_cast<std::size_t>(tr.state)] = true;
  }

  for (int s = 0; s < n_states; ++s) {
    if (!visited[static_cast<std::size_t>(s)]) {
      mdp.make_absorbing(s);
      continue;
    }
    for (int a = 0; a < n_actions; ++a) {
      const auto i = static_cast<std::size_t>(s) * na + static_cast<std::size_t>(a);
      if (pair_counts[i] == 0.0) {
        mdp.set_row(s, a, {{s, 1.0}});
        mdp.set_reward(s, a, 0.0);
        continue;
      }
      std::vector<Outcome> row;
      for (const auto& [next, count] : next_counts[i]) row.push_back({next, count / pair_counts[i]});
      mdp.set_row(s, a, std::move(row));
      mdp.set_reward(s, a, reward_sums[i] / pair_counts[i]);
    }
  }

  std::vector<double> mu0(static_cast<std::size_t>(n_states), 0.0);
  const auto starts = dataset.initial_states();
  for (int s : starts) mu0[static_cast<std::size_t>(s)] += 1.0 / static_cast<double>(starts.size());
  mdp.set_initial_dist(std::move(mu0));
  return mdp;
}

TabularPolicy estimate_tabular_behavior(const Dataset& dataset, int n_states, int n_actions) {
  if (dataset.empty()) throw std::invalid_argument("estimate_tabular_behavior: empty dataset");
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(n_states, n_actions);
  for (const auto& tr : dataset.transitions()) {
    if (tr.state < 0 || tr.state >= n_states || tr.action < 0 || tr.action >= n_actions) {
      throw std::invalid_argument("estimate_tabular_behavior: transition out of range");
    }
    counts(tr.state, tr.action) += 1.0;
  }
  for (Eigen::Index s = 0; s < counts.rows(); ++s) {
    const double total = counts.row(s).sum();
    if (total > 0.0) {
      counts.row(s) /= total;
    } else {
      counts.row(s).setConstant(1.0 / n_actions);
    }
  }
  return TabularPolicy(std::move(counts));
}

}  // namespace opesel
