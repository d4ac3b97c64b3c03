#include "opesel/nn.hpp"
#include "opesel/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

using namespace opesel;
using namespace opesel::nn;

namespace {

NetConfig small_config(std::uint64_t seed = 7) {
  NetConfig c;
  c.hidden_layers = 1;
  c.hidden_units = 32;
  c.learning_rate = 1e-2;
  c.batch_size = 32;
  c.max_epochs = 200;
  c.patience = 20;
  c.seed = seed;
  return c;
}

Eigen::MatrixXd random_inputs(int n, int d, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd x(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) x(i, j) = 2.0 * rng.uniform() - 1.0;
  return x;
}

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

}  // namespace

TEST(Regressor, ConstantTarget) {
  PatternSet p;
  p.inputs = random_inputs(200, 3, 1);
  p.targets = Eigen::MatrixXd::Constant(200, 1, 0.37);
  const Model m = fit_regressor(p, small_config());
  EXPECT_LT((m.predict(p.inputs).array() - 0.37).abs().maxCoeff(), 1e-2);
}

TEST(Regressor, LinearTarget) {
  PatternSet p;
  p.inputs = random_inputs(1000, 4, 2);
  const Eigen::Vector4d w(0.5, -1.0, 0.25, 2.0);
  p.targets = p.inputs * w;
  NetConfig c = small_config();
  c.hidden_units = 64;
  c.learning_rate = 3e-3;
  c.max_epochs = 400;
  c.patience = 40;
  TrainReport report;
  fit_regressor(p, c, &report);
  const double mean = p.targets.mean();
  const double variance = (p.targets.array() - mean).square().mean();
  EXPECT_LT(report.best_val_loss, 1e-3 * variance);
}

TEST(Regressor, SameSeedSameWeights) {
  PatternSet p;
  p.inputs = random_inputs(120, 3, 3);
  p.targets = p.inputs.rowwise().sum();
  NetConfig c = small_config();
  c.max_epochs = 20;
  const Model a = fit_regressor(p, c);
  const Model b = fit_regressor(p, c);
  EXPECT_EQ(a.net().parameters(), b.net().parameters());
  c.seed = 8;
  EXPECT_NE(fit_regressor(p, c).net().parameters(), a.net().parameters());
}

TEST(Regressor, EarlyStoppingRestoresBestEpoch) {
  PatternSet p;
  p.inputs = random_inputs(100, 2, 4);
  Rng rng(5);
  p.targets.resize(100, 1);
  for (int i = 0; i < 100; ++i) p.targets(i, 0) = rng.uniform();
  NetConfig c = small_config();
  c.hidden_units = 128;
  c.patience = 5;
  TrainReport report;
  const Model m = fit_regressor(p, c, &report);
  ASSERT_GE(report.best_epoch, 1);
  ASSERT_LE(report.best_epoch, report.epochs_run);
  const auto& val = report.val_loss;
  EXPECT_EQ(*std::min_element(val.begin(), val.end()), val[static_cast<std::size_t>(report.best_epoch - 1)]);
  EXPECT_EQ(report.best_val_loss, val[static_cast<std::size_t>(report.best_epoch - 1)]);
  if (report.epochs_run < c.max_epochs) EXPECT_EQ(report.epochs_run - report.best_epoch, c.patience);
}

TEST(Regressor, SelectedHeadsOnlyTrainLoggedColumn) {
  PatternSet p;
  p.inputs = random_inputs(300, 2, 6);
  p.targets.resize(300, 1);
  for (int i = 0; i < 300; ++i) {
    p.columns.push_back(i % 2);
    p.targets(i, 0) = (i % 2 == 0) ? 0.5 : -0.5;
  }
  p.heads = 3;
  const Model m = fit_regressor(p, small_config());
  EXPECT_EQ(m.net().output_dim(), 3);
  const Eigen::MatrixXd out = m.predict(p.inputs);
  EXPECT_LT((out.col(0).array() - 0.5).abs().maxCoeff(), 0.05);
  EXPECT_LT((out.col(1).array() + 0.5).abs().maxCoeff(), 0.05);
}

TEST(Regressor, NonFiniteLossAborts) {
  PatternSet p;
  p.inputs = random_inputs(50, 2, 9);
  p.targets = Eigen::MatrixXd::Constant(50, 1, std::numeric_limits<double>::quiet_NaN());
  EXPECT_THROW(fit_regressor(p, small_config()), TrainingError);
}

TEST(Classifier, SingleClass) {
  PatternSet p;
  p.inputs = random_inputs(200, 3, 10);
  p.labels.assign(200, 2);
  const Model m = fit_classifier(p, 4, small_config());
  EXPECT_GE(m.predict(p.inputs).col(2).minCoeff(), 0.99);
}

TEST(Classifier, UniformLabelsGiveUniformPrediction) {
  PatternSet p;
  p.inputs = random_inputs(4000, 3, 11);
  Rng rng(12);
  for (int i = 0; i < 4000; ++i) p.labels.push_back(rng.uniform_int(8));
  NetConfig c = small_config();
  c.learning_rate = 1e-3;
  const Model m = fit_classifier(p, 8, c);
  const Eigen::VectorXd mean = m.predict(p.inputs).colwise().mean();
  for (int k = 0; k < 8; ++k) EXPECT_NEAR(mean(k), 0.125, 0.05);
}

TEST(Classifier, RowsSumToOne) {
  Mlp net(5, {7}, 8);
  net.initialize(3);
  const Model m(net, OutputKind::softmax, NetConfig{});
  const Eigen::MatrixXd probs = m.predict(random_inputs(50, 5, 13) * 10.0);
  for (int i = 0; i < probs.rows(); ++i) {
    EXPECT_NEAR(probs.row(i).sum(), 1.0, 1e-6);
    EXPECT_GE(probs.row(i).minCoeff(), 0.0);
  }
}

TEST(Predict, BatchMatchesSingle) {
  Mlp net(4, {6, 5}, 3);
  net.initialize(4);
  const Model m(net, OutputKind::linear, NetConfig{});
  const Eigen::MatrixXd x = random_inputs(20, 4, 14);
  const Eigen::MatrixXd batch = m.predict(x);
  for (int i = 0; i < 20; ++i) {
    EXPECT_LT((batch.row(i).transpose() - m.predict_one(x.row(i).transpose())).cwiseAbs().maxCoeff(), 1e-9);
  }
  EXPECT_THROW(m.predict(random_inputs(2, 3, 1)), std::invalid_argument);
}

TEST(Predict, HandComputedForwardPass) {
  // 1 input, 2 hidden, 1 output: W1 = [1, -1], b1 = [0, 0.5], W2 = [2, 3], b2 = 0.25.
  Mlp net(1, {2}, 1);
  net.parameters() << 1.0, -1.0, 0.0, 0.5, 2.0, 3.0, 0.25;
  Eigen::MatrixXd x(2, 1);
  x << 2.0, -2.0;
  const Eigen::MatrixXd y = net.forward(x);
  // x=2: h = relu(2), relu(-1.5) = (2, 0) -> 4.25.  x=-2: h = (0, 2.5) -> 7.75.
  EXPECT_DOUBLE_EQ(y(0, 0), 4.25);
  EXPECT_DOUBLE_EQ(y(1, 0), 7.75);
}

TEST(Adam, TwoStepHandTrace) {
  // One parameter, loss (w - 3)^2 so g = 2 (w - 3).
  const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  Adam adam(1, lr, b1, b2, eps);
  Eigen::VectorXd w(1);
  w << 1.0;

  double ref = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 2; ++t) {
    const double g = 2.0 * (ref - 3.0);
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    ref -= lr * mhat / (std::sqrt(vhat) + eps);

    Eigen::VectorXd grad(1);
    grad << 2.0 * (w(0) - 3.0);
    adam.step(w, grad);
    EXPECT_NEAR(w(0), ref, 1e-15) << "t=" << t;
  }
  // By hand: step 1 moves by lr to 1.1; step 2 has m^ = -0.74/0.19 and
  // v^ = 0.030424/0.001999, moving by 0.1 * 3.894737 / 3.901232.
  EXPECT_NEAR(w(0), 1.1998335, 1e-7);
  EXPECT_EQ(adam.steps(), 2);
}

TEST(GradientCheck, TinyNetSingleSample) {
  Mlp net(1, {1}, 1);
  net.parameters() << 0.7, 0.1, -0.4, 0.2;
  PatternSet p;
  p.inputs = Eigen::MatrixXd::Constant(1, 1, 0.9);
  p.targets = Eigen::MatrixXd::Constant(1, 1, 0.3);
  const auto r = gradient_check(net, p, Loss::mse, 1e-6);
  EXPECT_TRUE(r.passed) << r.max_relative_error;
}

TEST(GradientCheck, RandomNetsAllLosses) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Mlp net(4, {6, 5}, 3);
    net.initialize(seed);
    PatternSet p;
    p.inputs = random_inputs(9, 4, 100 + seed);
    p.targets = random_inputs(9, 3, 200 + seed);
    EXPECT_LE(gradient_check(net, p, Loss::mse).max_relative_error, 1e-4);

    PatternSet sel;
    sel.inputs = p.inputs;
    sel.targets = p.targets.col(0);
    for (int i = 0; i < 9; ++i) sel.columns.push_back(i % 3);
    EXPECT_LE(gradient_check(net, sel, Loss::selected_mse).max_relative_error, 1e-4);

    PatternSet cls;
    cls.inputs = p.inputs;
    for (int i = 0; i < 9; ++i) cls.labels.push_back((i * 2) % 3);
    EXPECT_LE(gradient_check(net, cls, Loss::softmax_cross_entropy).max_relative_error, 1e-4);
  }
}

TEST(GradientCheck, ZeroNetOnlyOutputBiasMoves) {
  Mlp net(3, {4}, 2);
  PatternSet p;
  p.inputs = Eigen::MatrixXd::Zero(2, 3);
  p.targets = Eigen::MatrixXd::Constant(2, 2, 1.0);
  Eigen::VectorXd g;
  net.loss(p, Loss::mse, all_rows(2), &g);
  const Eigen::Index n = g.size();
  EXPECT_EQ(g.head(n - 2).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_NE(g(n - 1), 0.0);
  EXPECT_NE(g(n - 2), 0.0);
}

TEST(ModelFile, RoundTripExact) {
  Mlp net(3, {5}, 2);
  net.initialize(21);
  NetConfig c;
  c.hidden_units = 5;
  c.seed = 21;
  const Model m(net, OutputKind::softmax, c);
  std::stringstream buf;
  write_model(buf, m);
  const Model back = read_model(buf);
  EXPECT_EQ(back.net().parameters(), m.net().parameters());
  EXPECT_EQ(back.net().widths(), m.net().widths());
  EXPECT_EQ(back.kind(), OutputKind::softmax);
  EXPECT_EQ(back.config().describe(), c.describe());
}

TEST(ModelFile, RejectsBadHeader) {
  std::istringstream in("# something else\n");
  EXPECT_THROW(read_model(in), std::exception);
}
