#include "opesel/nn.hpp"

#include "opesel/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace opesel::nn {

void NetConfig::validate() const {
  if (hidden_layers < 1 || hidden_units < 1 || batch_size < 1 || max_epochs < 1 || patience < 1) {
    throw std::invalid_argument("NetConfig: counts must be positive");
  }
  if (!(learning_rate > 0.0)) throw std::invalid_argument("NetConfig: learning_rate must be > 0");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw std::invalid_argument("NetConfig: val_fraction must lie in (0, 1)");
  }
}

std::string NetConfig::describe() const {
  std::ostringstream out;
  out.precision(17);
  out << "hidden_layers=" << hidden_layers << " hidden_units=" << hidden_units
      << " learning_rate=" << learning_rate << " batch_size=" << batch_size
      << " max_epochs=" << max_epochs << " patience=" << patience
      << " val_fraction=" << val_fraction << " seed=" << seed;
  return out.str();
}

Loss regression_loss(const PatternSet& patterns) {
  return patterns.columns.empty() ? Loss::mse : Loss::selected_mse;
}

Mlp::Mlp(int input_dim, std::vector<int> hidden, int output_dim) {
  if (input_dim < 1 || output_dim < 1) throw std::invalid_argument("Mlp: dimensions must be >= 1");
  widths_.push_back(input_dim);
  for (int h : hidden) {
    if (h < 1) throw std::invalid_argument("Mlp: hidden width must be >= 1");
    widths_.push_back(h);
  }
  widths_.push_back(output_dim);
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    offsets_.push_back(total);
    total += static_cast<std::size_t>(widths_[l]) * static_cast<std::size_t>(widths_[l + 1]) +
             static_cast<std::size_t>(widths_[l + 1]);
  }
  params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(total));
}

void Mlp::initialize(std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(widths_[l]));
    const std::size_t count =
        static_cast<std::size_t>(widths_[l]) * static_cast<std::size_t>(widths_[l + 1]) +
        static_cast<std::size_t>(widths_[l + 1]);
    for (std::size_t k = 0; k < count; ++k) {
      params_(static_cast<Eigen::Index>(offsets_[l] + k)) = (2.0 * rng.uniform() - 1.0) * bound;
    }
  }
}

namespace {

using ConstMap = Eigen::Map<const Eigen::MatrixXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& m, std::span<const std::size_t> rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

void softmax_rows(Eigen::MatrixXd& z) {
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double top = z.row(i).maxCoeff();
    z.row(i) = (z.row(i).array() - top).exp();
    z.row(i) /= z.row(i).sum();
  }
}

}  // namespace

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& inputs) const {
  if (inputs.cols() != input_dim()) {
    throw std::invalid_argument("Mlp::forward: expected " + std::to_string(input_dim()) +
                                " input columns, got " + std::to_string(inputs.cols()));
  }
  Eigen::MatrixXd a = inputs;
  const std::size_t n_layers = widths_.size() - 1;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const int in = widths_[l];
    const int out = widths_[l + 1];
    ConstMap w(params_.data() + offsets_[l], in, out);
    ConstVecMap b(params_.data() + offsets_[l] + static_cast<std::size_t>(in * out), out);
    Eigen::MatrixXd z = a * w;
    z.rowwise() += b.transpose();
    if (l + 1 < n_layers) z = z.cwiseMax(0.0);
    a = std::move(z);
  }
  return a;
}

double Mlp::loss(const PatternSet& patterns, Loss kind, std::span<const std::size_t> rows,
                 Eigen::VectorXd* gradient) const {
  const auto n = static_cast<double>(rows.size());
  if (rows.empty()) throw std::invalid_argument("Mlp::loss: no rows");
  const std::size_t n_layers = widths_.size() - 1;

  std::vector<Eigen::MatrixXd> acts;  // acts[l] = input to layer l
  acts.reserve(n_layers + 1);
  acts.push_back(gather_rows(patterns.inputs, rows));
  if (acts.front().cols() != input_dim()) {
    throw std::invalid_argument("Mlp::loss: pattern dimension mismatch");
  }
  for (std::size_t l = 0; l < n_layers; ++l) {
    const int in = widths_[l];
    const int out = widths_[l + 1];
    ConstMap w(params_.data() + offsets_[l], in, out);
    ConstVecMap b(params_.data() + offsets_[l] + static_cast<std::size_t>(in * out), out);
    Eigen::MatrixXd z = acts.back() * w;
    z.rowwise() += b.transpose();
    if (l + 1 < n_layers) z = z.cwiseMax(0.0);
    acts.push_back(std::move(z));
  }

  const Eigen::MatrixXd& out = acts.back();
  Eigen::MatrixXd delta = Eigen::MatrixXd::Zero(out.rows(), out.cols());
  double value = 0.0;
  switch (kind) {
    case Loss::mse: {
      const Eigen::MatrixXd y = gather_rows(patterns.targets, rows);
      if (y.cols() != out.cols()) throw std::invalid_argument("Mlp::loss: target width mismatch");
      const Eigen::MatrixXd diff = out - y;
      const double scale = n * static_cast<double>(out.cols());
      value = diff.squaredNorm() / scale;
      delta = 2.0 * diff / scale;
      break;
    }
    case Loss::selected_mse: {
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(rows[i]);
        const int c = patterns.columns[rows[i]];
        if (c < 0 || c >= out.cols()) throw std::invalid_argument("Mlp::loss: column out of range");
        const double diff = out(static_cast<Eigen::Index>(i), c) - patterns.targets(r, 0);
        value += diff * diff / n;
        delta(static_cast<Eigen::Index>(i), c) = 2.0 * diff / n;
      }
      break;
    }
    case Loss::softmax_cross_entropy: {
      Eigen::MatrixXd p = out;
      softmax_rows(p);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const int c = patterns.labels[rows[i]];
        if (c < 0 || c >= out.cols()) throw std::invalid_argument("Mlp::loss: label out of range");
        const auto ii = static_cast<Eigen::Index>(i);
        // log-sum-exp form keeps the loss finite for saturated outputs
        const double top = out.row(ii).maxCoeff();
        const double lse = top + std::log((out.row(ii).array() - top).exp().sum());
        value += (lse - out(ii, c)) / n;
        delta.row(ii) = p.row(ii) / n;
        delta(ii, c) -= 1.0 / n;
      }
      break;
    }
  }

  if (gradient != nullptr) {
    gradient->setZero(params_.size());
    for (std::size_t l = n_layers; l-- > 0;) {
      const int in = widths_[l];
      const int width = widths_[l + 1];
      Eigen::Map<Eigen::MatrixXd> gw(gradient->data() + offsets_[l], in, width);
      Eigen::Map<Eigen::VectorXd> gb(gradient->data() + offsets_[l] + static_cast<std::size_t>(in * width),
                                     width);
      gw.noalias() = acts[l].transpose() * delta;
      gb = delta.colwise().sum().transpose();
      if (l > 0) {
        ConstMap w(params_.data() + offsets_[l], in, width);
        Eigen::MatrixXd back = delta * w.transpose();
        delta = (acts[l].array() > 0.0).select(back, 0.0);
      }
    }
  }
  return value;
}

Adam::Adam(std::size_t n_params, double learning_rate, double beta1, double beta2, double epsilon)
    : lr_(learning_rate),
      beta1_(beta1),
      beta2_(beta2),
      eps_(epsilon),
      m_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_params))),
      v_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_params))) {}

void Adam::step(Eigen::VectorXd& params, const Eigen::VectorXd& gradient) {
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * gradient;
  v_ = beta2_ * v_ + (1.0 - beta2_) * gradient.cwiseProduct(gradient);
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

Eigen::MatrixXd Model::predict(const Eigen::MatrixXd& inputs) const {
  Eigen::MatrixXd out = net_.forward(inputs);
  if (kind_ == OutputKind::softmax) softmax_rows(out);
  return out;
}

Eigen::VectorXd Model::predict_one(const Eigen::VectorXd& input) const {
  return predict(input.transpose()).row(0).transpose();
}

namespace {

std::vector<int> hidden_widths(const NetConfig& config) {
  return std::vector<int>(static_cast<std::size_t>(config.hidden_layers), config.hidden_units);
}

Model fit(const PatternSet& patterns, Loss kind, int n_outputs, OutputKind output,
          const NetConfig& config, TrainReport* report) {
  config.validate();
  const std::size_t n = patterns.size();
  if (n == 0) throw std::invalid_argument("fit: empty pattern set");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng split_rng(derive_seed(config.seed, 0));
  shuffle(order, split_rng);
  std::size_t n_val = 0;
  if (n >= 2) {
    n_val = static_cast<std::size_t>(std::floor(config.val_fraction * static_cast<double>(n)));
    n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
  }
  std::vector<std::size_t> train(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> val(order.end() - static_cast<std::ptrdiff_t>(n_val), order.end());
  const std::vector<std::size_t>& monitor = val.empty() ? train : val;

  Mlp net(static_cast<int>(patterns.inputs.cols()), hidden_widths(config), n_outputs);
  net.initialize(derive_seed(config.seed, 1));
  Adam adam(static_cast<std::size_t>(net.parameters().size()), config.learning_rate);

  TrainReport local;
  TrainReport& rep = report != nullptr ? *report : local;
  rep = TrainReport{};
  rep.best_val_loss = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best = net.parameters();
  Eigen::VectorXd gradient;
  int since_best = 0;
  const auto batch = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    Rng epoch_rng(derive_seed(config.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    shuffle(train, epoch_rng);
    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < train.size(); begin += batch) {
      const std::size_t count = std::min(batch, train.size() - begin);
      const std::span<const std::size_t> rows(train.data() + begin, count);
      const double batch_loss = net.loss(patterns, kind, rows, &gradient);
      if (!std::isfinite(batch_loss) || !gradient.allFinite()) {
        throw TrainingError("fit: non-finite loss at epoch " + std::to_string(epoch) +
                            " (" + config.describe() + ")");
      }
      epoch_loss += batch_loss * static_cast<double>(count);
      adam.step(net.parameters(), gradient);
    }
    rep.train_loss.push_back(epoch_loss / static_cast<double>(train.size()));
    const double val_loss = net.loss(patterns, kind, monitor);
    if (!std::isfinite(val_loss)) {
      throw TrainingError("fit: non-finite validation loss at epoch " + std::to_string(epoch));
    }
    rep.val_loss.push_back(val_loss);
    rep.epochs_run = epoch;
    if (val_loss < rep.best_val_loss) {
      rep.best_val_loss = val_loss;
      rep.best_epoch = epoch;
      best = net.parameters();
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  net.parameters() = best;
  return Model(std::move(net), output, config);
}

}  // namespace

Model fit_regressor(const PatternSet& patterns, const NetConfig& config, TrainReport* report) {
  const Loss kind = regression_loss(patterns);
  if (patterns.targets.rows() != patterns.inputs.rows()) {
    throw std::invalid_argument("fit_regressor: targets and inputs differ in length");
  }
  int outputs = static_cast<int>(patterns.targets.cols());
  if (kind == Loss::selected_mse) {
    if (patterns.columns.size() != patterns.size()) {
      throw std::invalid_argument("fit_regressor: one output column per pattern required");
    }
    outputs = patterns.heads > 0
                  ? patterns.heads
                  : *std::max_element(patterns.columns.begin(), patterns.columns.end()) + 1;
  }
  return fit(patterns, kind, outputs, OutputKind::linear, config, report);
}

Model fit_classifier(const PatternSet& patterns, int n_classes, const NetConfig& config,
                     TrainReport* report) {
  if (patterns.labels.size() != patterns.size()) {
    throw std::invalid_argument("fit_classifier: one label per pattern required");
  }
  for (int c : patterns.labels) {
    if (c < 0 || c >= n_classes) throw std::invalid_argument("fit_classifier: label out of range");
  }
  return fit(patterns, Loss::softmax_cross_entropy, n_classes, OutputKind::softmax, config,
             report);
}

GradientCheckReport gradient_check(const Mlp& net, const PatternSet& patterns, Loss kind,
                                   double tolerance, double step) {
  std::vector<std::size_t> rows(patterns.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  Eigen::VectorXd analytic;
  net.loss(patterns, kind, rows, &analytic);

  Mlp probe = net;
  GradientCheckReport report;
  for (Eigen::Index k = 0; k < analytic.size(); ++k) {
    const double original = probe.parameters()(k);
    probe.parameters()(k) = original + step;
    const double up = probe.loss(patterns, kind, rows);
    probe.parameters()(k) = original - step;
    const double down = probe.loss(patterns, kind, rows);
    probe.parameters()(k) = original;
    const double numeric = (up - down) / (2.0 * step);
    const double scale = std::max({std::abs(analytic(k)), std::abs(numeric), 1e-7});
    const double rel = std::abs(analytic(k) - numeric) / scale;
    if (k == 0 || rel > report.max_relative_error) {
      report.max_relative_error = rel;
      report.worst_parameter = static_cast<std::size_t>(k);
      report.analytic = analytic(k);
      report.numeric = numeric;
    }
  }
  report.passed = report.max_relative_error <= tolerance;
  return report;
}

void write_model(std::ostream& out, const Model& model) {
  out << "# opesel-model v1\n";
  out << "output=" << (model.kind() == OutputKind::softmax ? "softmax" : "linear") << '\n';
  out << "config=" << model.config().describe() << '\n';
  out << "widths=";
  const auto& widths = model.net().widths();
  for (std::size_t i = 0; i < widths.size(); ++i) out << (i ? "," : "") << widths[i];
  out << '\n';
  const auto& params = model.net().parameters();
  out << "params=" << params.size() << '\n';
  char buf[32];
  for (Eigen::Index k = 0; k < params.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.17g\n", params(k));
    out << buf;
  }
}

namespace {

std::string expect_key(std::istream& in, const std::string& key) {
  std::string line;
  if (!std::getline(in, line) || line.rfind(key + "=", 0) != 0) {
    throw std::runtime_error("read_model: expected '" + key + "='");
  }
  return line.substr(key.size() + 1);
}

NetConfig parse_config(const std::string& text) {
  NetConfig config;
  std::istringstream in(text);
  std::string item;
  while (in >> item) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = item.substr(0, eq);
    const std::string value = item.substr(eq + 1);
    if (key == "hidden_layers") config.hidden_layers = std::stoi(value);
    else if (key == "hidden_units") config.hidden_units = std::stoi(value);
    else if (key == "learning_rate") config.learning_rate = std::stod(value);
    else if (key == "batch_size") config.batch_size = std::stoi(value);
    else if (key == "max_epochs") config.max_epochs = std::stoi(value);
    else if (key == "patience") config.patience = std::stoi(value);
    else if (key == "val_fraction") config.val_fraction = std::stod(value);
    else if (key == "seed") config.seed = std::stoull(value);
  }
  return config;
}

}  // namespace

Model read_model(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "# opesel-model v1") {
    throw std::runtime_error("read_model: missing opesel-model v1 header");
  }
  const std::string output = expect_key(in, "output");
  const NetConfig config = parse_config(expect_key(in, "config"));
  std::vector<int> widths;
  {
    std::stringstream ss(expect_key(in, "widths"));
    std::string cell;
    while (std::getline(ss, cell, ',')) widths.push_back(std::stoi(cell));
  }
  if (widths.size() < 2) throw std::runtime_error("read_model: need at least two widths");
  const auto count = std::stoll(expect_key(in, "params"));
  Mlp net(widths.front(), std::vector<int>(widths.begin() + 1, widths.end() - 1), widths.back());
  if (count != net.parameters().size()) throw std::runtime_error("read_model: parameter count mismatch");
  for (Eigen::Index k = 0; k < count; ++k) {
    if (!std::getline(in, line)) throw std::runtime_error("read_model: truncated parameters");
    net.parameters()(k) = std::strtod(line.c_str(), nullptr);
  }
  return Model(std::move(net), output == "softmax" ? OutputKind::softmax : OutputKind::linear,
               config);
}

void save_model(const Model& model, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    write_model(out, model);
  }
  std::filesystem::rename(tmp, path);
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model file " + path.string());
  return read_model(in);
}

}  // namespace opesel::nn
