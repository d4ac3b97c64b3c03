#pragma once

// Finite MDPs, exact and truncated policy evaluation, value iteration, and
// count-based (maximum likelihood) estimation of tabular models from data.

#include <Eigen/Dense>

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace opesel {

class Dataset;

/// One entry of a sparse transition row: p(next | s, a) = prob.
struct Outcome {
  int next = 0;
  double prob = 0.0;
};

/// Finite MDP with sparse transition rows.
///
/// Rows are stored per (s, a) as lists of outcomes with strictly positive
/// probability, which keeps the 1442 x 8 x 1442 sepsis tensor small while
/// still answering dense queries through transition(s, a, s').
class TabularMDP {
 public:
  TabularMDP() = default;
  TabularMDP(int n_states, int n_actions, double discount);

  /// Builds from a dense tensor laid out as P[(s * n_actions + a) * n_states + s'].
  static TabularMDP from_dense(int n_states, int n_actions, double discount,
                               std::span<const double> transition,
                               std::span<const double> reward,
                               std::span<const double> initial_dist,
                               std::vector<bool> absorbing = {});

  int n_states() const { return n_states_; }
  int n_actions() const { return n_actions_; }
  double discount() const { return discount_; }
  void set_discount(double discount) { discount_ = discount; }

  std::span<const Outcome> row(int s, int a) const { return rows_[index(s, a)]; }
  void set_row(int s, int a, std::vector<Outcome> outcomes);
  double transition(int s, int a, int next) const;

  double reward(int s, int a) const { return reward_[index(s, a)]; }
  void set_reward(int s, int a, double r) { reward_[index(s, a)] = r; }

  const std::vector<double>& initial_dist() const { return initial_dist_; }
  void set_initial_dist(std::vector<double> dist);

  bool absorbing(int s) const { return absorbing_[static_cast<std::size_t>(s)]; }
  /// Marks s absorbing: every action self-loops with probability 1 and reward 0.
  void make_absorbing(int s);

  /// Throws std::invalid_argument describing the first violated invariant.
  void validate(double tolerance = 1e-9) const;

 private:
  std::size_t index(int s, int a) const {
    return static_cast<std::size_t>(s) * static_cast<std::size_t>(n_actions_) +
           static_cast<std::size_t>(a);
  }

  int n_states_ = 0;
  int n_actions_ = 0;
  double discount_ = 0.99;
  std::vector<std::vector<Outcome>> rows_;
  std::vector<double> reward_;
  std::vector<double> initial_dist_;
  std::vector<bool> absorbing_;
};

/// pi(a|s) as a dense (n_states x n_actions) row-stochastic matrix.
class TabularPolicy {
 public:
  TabularPolicy() = default;
  explicit TabularPolicy(Eigen::MatrixXd action_probs);

  static TabularPolicy uniform(int n_states, int n_actions);
  static TabularPolicy deterministic(std::span<const int> actions, int n_actions);

  int n_states() const { return static_cast<int>(probs_.rows()); }
  int n_actions() const { return static_cast<int>(probs_.cols()); }
  double prob(int s, int a) const { return probs_(s, a); }
  const Eigen::MatrixXd& probs() const { return probs_; }

  /// Most likely action, lowest index on ties.
  int greedy_action(int s) const;

  void validate(double tolerance = 1e-9) const;

 private:
  Eigen::MatrixXd probs_;
};

struct ValueFunctions {
  Eigen::VectorXd v;
  Eigen::MatrixXd q;
  double scalar_value = 0.0;
};

/// Raised when (I - gamma P_pi) is singular on the non-absorbing states.
class EvaluationInfeasible : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : std::runtime_error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

/// Exact evaluation by solving (I - gamma P_pi) v = r_pi over non-absorbing states.
ValueFunctions evaluate_policy_analytic(const TabularMDP& mdp, const TabularPolicy& policy);

/// H-step truncated evaluation: v_0 = 0, v_h = r_pi + gamma P_pi v_{h-1};
/// q is the H-step action value r + gamma P v_{H-1}.
ValueFunctions evaluate_policy_iterative(const TabularMDP& mdp, const TabularPolicy& policy,
                                         int horizon);

struct OptimalSolution {
  Eigen::MatrixXd q;
  std::vector<int> greedy;
  TabularPolicy policy;
  int iterations = 0;
  double residual = 0.0;
};

/// Value iteration to sup-norm tolerance on Q*. Throws ConvergenceError after
/// max_iterations sweeps.
OptimalSolution value_iteration(const TabularMDP& mdp, double tolerance,
                                int max_iterations = 1'000'000);

/// Argmax per row, lowest index on ties.
std::vector<int> greedy_actions(const Eigen::MatrixXd& q);

/// Count-based MLE of p, r and mu0. Pairs never observed become zero-reward
/// self-loops; states with no observed outgoing transition are marked absorbing.
TabularMDP estimate_tabular_mdp(const Dataset& dataset, int n_states, int n_actions,
                                double discount);

/// pi_b(a|s) = count(s, a) / count(s); uniform for unvisited states.
TabularPolicy estimate_tabular_behavior(const Dataset& dataset, int n_states, int n_actions);

}  // namespace opesel
