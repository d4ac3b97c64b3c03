#pragma once

// Feedforward networks trained from scratch: ReLU MLPs with Adam, mini-batches
// and early stopping on an internal validation split.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace opesel::nn {

struct NetConfig {
  int hidden_layers = 1;
  int hidden_units = 1000;
  double learning_rate = 1e-3;
  int batch_size = 64;
  int max_epochs = 100;
  int patience = 10;
  double val_fraction = 0.10;
  std::uint64_t seed = 0;

  void validate() const;
  std::string describe() const;
};

/// Training patterns, one row per pattern.
///
/// Regression uses `targets` (n x k). When `columns` is non-empty, targets is
/// n x 1 and only output `columns[i]` of pattern i enters the loss (the
/// Q-network case: one head per action, supervised on the logged action).
/// Classification uses `labels`.
struct PatternSet {
  Eigen::MatrixXd inputs;
  Eigen::MatrixXd targets;
  std::vector<int> columns;
  std::vector<int> labels;
  /// Output count for the `columns` case; 0 means max(columns) + 1.
  int heads = 0;

  std::size_t size() const { return static_cast<std::size_t>(inputs.rows()); }
};

enum class Loss { mse, selected_mse, softmax_cross_entropy };

/// Loss implied by the populated fields of a pattern set.
Loss regression_loss(const PatternSet& patterns);

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense ReLU network with a linear output layer. Parameters live in one flat
/// vector: for each layer, the (in x out) weight matrix in column-major order
/// followed by the bias.
class Mlp {
 public:
  Mlp() = default;
  Mlp(int input_dim, std::vector<int> hidden, int output_dim);

  /// Weights and biases uniform in +-1/sqrt(fan_in).
  void initialize(std::uint64_t seed);

  int input_dim() const { return widths_.front(); }
  int output_dim() const { return widths_.back(); }
  const std::vector<int>& widths() const { return widths_; }

  Eigen::VectorXd& parameters() { return params_; }
  const Eigen::VectorXd& parameters() const { return params_; }

  /// Raw (pre-softmax) outputs, one row per input row.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& inputs) const;

  /// Mean loss over `rows` of `patterns`; accumulates d(loss)/d(params) into
  /// *gradient when given (resized and zeroed first).
  double loss(const PatternSet& patterns, Loss kind, std::span<const std::size_t> rows,
              Eigen::VectorXd* gradient = nullptr) const;

 private:
  std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }

  std::vector<int> widths_;
  std::vector<std::size_t> offsets_;
  Eigen::VectorXd params_;
};

/// Adam with bias-corrected first and second moment estimates.
class Adam {
 public:
  Adam(std::size_t n_params, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
       double epsilon = 1e-8);

  void step(Eigen::VectorXd& params, const Eigen::VectorXd& gradient);
  long steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  Eigen::VectorXd m_, v_;
};

enum class OutputKind { linear, softmax };

/// A trained network plus its output transform.
class Model {
 public:
  Model() = default;
  Model(Mlp net, OutputKind kind, NetConfig config)
      : net_(std::move(net)), kind_(kind), config_(config) {}

  /// Deterministic forward pass; softmax models return probability rows.
  Eigen::MatrixXd predict(const Eigen::MatrixXd& inputs) const;
  Eigen::VectorXd predict_one(const Eigen::VectorXd& input) const;

  const Mlp& net() const { return net_; }
  Mlp& net() { return net_; }
  OutputKind kind() const { return kind_; }
  const NetConfig& config() const { return config_; }

 private:
  Mlp net_;
  OutputKind kind_ = OutputKind::linear;
  NetConfig config_;
};

struct TrainReport {
  int epochs_run = 0;
  int best_epoch = 0;  // 1-based
  double best_val_loss = 0.0;
  std::vector<double> train_loss;
  std::vector<double> val_loss;
};

Model fit_regressor(const PatternSet& patterns, const NetConfig& config,
                    TrainReport* report = nullptr);
Model fit_classifier(const PatternSet& patterns, int n_classes, const NetConfig& config,
                     TrainReport* report = nullptr);

struct GradientCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_parameter = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  bool passed = true;
};

/// Compares backpropagated gradients with central finite differences.
/// Relative error per parameter is |g - g_fd| / max(|g|, |g_fd|, 1e-7).
GradientCheckReport gradient_check(const Mlp& net, const PatternSet& patterns, Loss kind,
                                   double tolerance = 1e-4, double step = 1e-5);

/// Text layout:
///   # opesel-model v1
///   output=<linear|softmax>
///   config=<NetConfig::describe()>
///   widths=<w0>,<w1>,...
///   params=<count>
///   one parameter per line, 17 significant digits
void write_model(std::ostream& out, const Model& model);
Model read_model(std::istream& in);
void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

}  // namespace opesel::nn
