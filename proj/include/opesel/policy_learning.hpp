#pragma once

// Fitted Q iteration (exact tabular regression or neural networks) and the
// candidate policy sets built from its checkpoints.

#include "opesel/dataset.hpp"
#include "opesel/mdp.hpp"
#include "opesel/nn.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace opesel {

inline constexpr double kValueClip = 1.0;

double clip_value(double x);

/// Action values over a finite state space. Neural Q-functions are
/// materialized by predicting on every state's feature vector; the network is
/// kept alongside for feature-space queries (AM rollouts).
struct QFunction {
  Eigen::MatrixXd table;
  std::shared_ptr<const nn::Model> model;

  double operator()(int s, int a) const { return table(s, a); }
  int n_states() const { return static_cast<int>(table.rows()); }
  int n_actions() const { return static_cast<int>(table.cols()); }

  std::vector<int> greedy() const { return greedy_actions(table); }
  TabularPolicy greedy_policy() const;
  /// Greedy action for an arbitrary feature vector; needs a model.
  int greedy_action(const Eigen::VectorXd& features) const;
};

/// Q-network outputs for each row of `features` (one head per action).
Eigen::MatrixXd materialize(const nn::Model& model, const Eigen::MatrixXd& features);

/// Tabular FQI: iteration h sets Q_h(s, a) to the mean clipped target
/// r + gamma * max_a' Q_{h-1}(s', a') over transitions at (s, a) (no bootstrap
/// on done). Unseen pairs stay 0. Returns Q_1..Q_H.
std::vector<QFunction> fqi_tabular(const Dataset& dataset, int n_states, int n_actions,
                                   int horizon, double discount);

/// Neural FQI on state features (row s of `features` describes state s).
/// Iteration h trains a fresh network seeded with derive_seed(config.seed, h)
/// and 8 output heads; only the logged action's head is supervised.
/// Returns the Q-functions at the requested (sorted, distinct) iterations.
std::vector<QFunction> fqi_neural(const Dataset& dataset, const Eigen::MatrixXd& features,
                                  int n_actions, const nn::NetConfig& config,
                                  std::span<const int> checkpoints, double discount);

/// pi~(a|s) = (1 - eps) pi(a|s) + eps (1 - pi(a|s)) / (|A| - 1).
/// For deterministic pi: 1 - eps on the chosen action, eps/(|A|-1) elsewhere.
TabularPolicy soften(const TabularPolicy& policy, double epsilon);

struct HyperGrid {
  std::vector<int> hidden_layers{1, 2};
  std::vector<int> hidden_units{100, 200, 500, 1000};
  std::vector<double> learning_rates{1e-3, 1e-4};
  std::vector<int> fqi_iterations{1, 2, 4, 8, 16, 32};

  std::size_t n_runs() const {
    return hidden_layers.size() * hidden_units.size() * learning_rates.size();
  }
  std::size_t size() const { return n_runs() * fqi_iterations.size(); }
};

struct Candidate {
  std::string id;
  int hidden_layers = 0;  // 0 for tabular candidates
  int hidden_units = 0;
  double learning_rate = 0.0;
  int iteration = 0;
  QFunction q;
  std::vector<int> actions;

  TabularPolicy policy(int n_actions) const { return TabularPolicy::deterministic(actions, n_actions); }
  std::string hyperparams() const;
};

struct CandidateSet {
  std::vector<Candidate> candidates;
  std::uint64_t seed = 0;
  std::string dataset_label;

  std::size_t size() const { return candidates.size(); }
};

/// Tabular candidates: the greedy policies of one FQI run at each iteration.
CandidateSet build_tabular_candidates(const Dataset& dataset, int n_states, int n_actions,
                                      std::span<const int> iterations, double discount);

/// One neural FQI run per (layers, units, learning rate); each run yields its
/// policies at every grid checkpoint. Run r is seeded with derive_seed(seed, r)
/// and runs are spread over `workers` threads.
CandidateSet build_candidates(const Dataset& dataset, const Eigen::MatrixXd& features,
                              int n_actions, const HyperGrid& grid, const nn::NetConfig& base,
                              std::uint64_t seed, double discount, int workers = 1);

/// Manifest: comment header, then
///   policy_id,hidden_layers,hidden_units,learning_rate,iteration,qtable_path,model_path
/// Q tables go to <stem>_q/<id>.txt and networks, if any, to
/// <stem>_models/<id>.txt beside the manifest; paths are stored relative to it.
void save_candidates(const CandidateSet& set, const std::filesystem::path& manifest,
                     const std::string& header_comment = {});
CandidateSet load_candidates(const std::filesystem::path& manifest);

void write_qtable(std::ostream& out, const Eigen::MatrixXd& table);
Eigen::MatrixXd read_qtable(std::istream& in);

}  // namespace opesel
