#pragma once

// Off-policy value estimates for a fixed evaluation policy from logged
// episodes: WIS, approximate models (tabular or rollout), FQE, WDR, and the
// FQI-value and TD-error baseline scores.

#include "opesel/dataset.hpp"
#include "opesel/mdp.hpp"
#include "opesel/nn.hpp"
#include "opesel/policy_learning.hpp"

#include <Eigen/Dense>

#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace opesel {

struct OpeEstimate {
  std::string method;
  std::string hyperparams;
  double value = 0.0;  // raw, unclipped
  bool defined = true;
  std::vector<std::pair<std::string, double>> diagnostics;

  /// Value clipped to the return range, as reported.
  double reported() const { return clip_value(value); }
  /// Ranking score: undefined estimates rank below every defined one.
  double score() const { return defined ? value : -std::numeric_limits<double>::infinity(); }
  double diagnostic(const std::string& key) const;
};

/// Raised when every importance weight is zero.
class UndefinedEstimate : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Cumulative importance ratios rho_{1:t} per episode for t = 0..T (T = the
/// longest episode), frozen at an episode's last value beyond its end, and
/// their per-horizon averages w_t. Column 0 is 1.
struct ImportanceWeights {
  Eigen::MatrixXd cumulative;
  Eigen::VectorXd average;
};

/// Ratios of `target` against `behavior` on the logged actions. Throws
/// std::invalid_argument if behavior gives a logged action zero probability.
ImportanceWeights importance_weights(const Dataset& dataset, const TabularPolicy& target,
                                     const TabularPolicy& behavior);

/// Discounted return of each episode.
std::vector<double> episode_returns(const Dataset& dataset, double discount);

/// Weighted importance sampling of the epsilon-softened policy. Episodes are
/// normalized at the longest horizon T over frozen ratios:
///   v = sum_j rho_{1:T}^{(j)} G_j / sum_j rho_{1:T}^{(j)},
/// which is a convex combination of episode returns. Throws UndefinedEstimate
/// when all weights vanish. Diagnostics: ess, zero_weight_episodes.
OpeEstimate wis(const Dataset& dataset, const TabularPolicy& policy,
                const TabularPolicy& behavior, double epsilon, double discount);

/// v = sum_s mu0(s) V(s) by exact evaluation in the estimated model.
OpeEstimate am_tabular(const TabularMDP& model, const TabularPolicy& policy);

/// Expected-dynamics regressors over <x(s), one-hot(a)>.
struct AmRegressors {
  nn::Model delta;   // x(s') - x(s)
  nn::Model reward;  // r
};

Eigen::VectorXd state_action_input(const Eigen::VectorXd& features, int action, int n_actions);

AmRegressors fit_am_models(const Dataset& dataset, const Eigen::MatrixXd& features, int n_actions,
                           const nn::NetConfig& config);

using FeaturePolicy = std::function<int(const Eigen::VectorXd&)>;

/// Deterministic rollouts x <- x + delta(x, pi(x)) for `horizon` steps from
/// each row of `initial_features`, averaging the discounted predicted rewards.
OpeEstimate am_rollout(const AmRegressors& models, const FeaturePolicy& policy, int n_actions,
                       int horizon, const Eigen::MatrixXd& initial_features, double discount);

struct FqeResult {
  QFunction q;
  OpeEstimate estimate;
};

/// Tabular FQE: H sweeps of exact per-(s, a) mean regression onto clipped
/// targets r + gamma sum_a' pi(a'|s') Q(s', a'); unseen pairs stay 0.
/// v = mean over episodes of sum_a pi(a|s_1) Q_H(s_1, a).
FqeResult fqe_tabular(const Dataset& dataset, const TabularPolicy& policy, int horizon,
                      double discount);

/// Neural FQE on state features; iteration h fits a fresh network seeded with
/// derive_seed(config.seed, h). Diagnostic td_residual is the RMS gap between
/// the last targets and the final network on the logged pairs.
FqeResult fqe_neural(const Dataset& dataset, const Eigen::MatrixXd& features,
                     const TabularPolicy& policy, int horizon, const nn::NetConfig& config,
                     double discount);

/// Weighted doubly robust estimate with per-decision weights rho_{1:t} / w_t
/// of the softened policy and control variates Q(s_t, a_t) and
/// V(s_t) = sum_a pi~(a|s_t) Q(s_t, a). Horizons with w_t = 0 are skipped and
/// counted in the skipped_terms diagnostic.
OpeEstimate wdr(const Dataset& dataset, const TabularPolicy& policy, const TabularPolicy& behavior,
                double epsilon, const Eigen::MatrixXd& qhat, double discount,
                const std::string& method = "wdr");

/// Mean over the dataset's initial states of sum_a pi(a|s_1) Q(s_1, a).
OpeEstimate fqi_value_score(const Eigen::MatrixXd& q, const TabularPolicy& policy,
                            const Dataset& dataset);

/// Root mean squared TD error of Q under pi on every logged transition, with
/// no bootstrap on done transitions.
double rms_tde(const Dataset& dataset, const TabularPolicy& policy, const Eigen::MatrixXd& q,
               double discount);

/// Softmax classifier of logged actions from state features, read out as a
/// tabular policy over every row of `features`.
TabularPolicy estimate_behavior_classifier(const Dataset& dataset, const Eigen::MatrixXd& features,
                                           int n_actions, const nn::NetConfig& config);

}  // namespace opesel
