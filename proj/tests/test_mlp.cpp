#include <gtest/gtest.h>

#include <cmath>

#include "ncprobe/doubleint.hpp"
#include "ncprobe/mlp.hpp"

using namespace ncprobe;

TEST(Network, ProbeArchitectureShapes) {
  const Network net = init_network(doubleint::probe_layer_sizes(), Activation::kRelu, 0);
  ASSERT_EQ(net.layers.size(), 6u);
  const std::vector<std::pair<int, int>> shapes{{64, 2}, {64, 64}, {64, 64}, {64, 64}, {3, 64}, {3, 3}};
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    EXPECT_EQ(net.layers[l].weight.rows(), shapes[l].first);
    EXPECT_EQ(net.layers[l].weight.cols(), shapes[l].second);
    EXPECT_EQ(net.layers[l].bias.cols(), shapes[l].first);
  }
  EXPECT_EQ(net.feature_size(), 3);
  EXPECT_EQ(net.layer_sizes(), doubleint::probe_layer_sizes());
}

TEST(Network, InitIsDeterministic) {
  EXPECT_EQ(init_network({2, 8, 3}, Activation::kTanh, 5), init_network({2, 8, 3}, Activation::kTanh, 5));
  EXPECT_FALSE(init_network({2, 8, 3}, Activation::kTanh, 5) == init_network({2, 8, 3}, Activation::kTanh, 6));
}

TEST(Network, InitScaleMatchesScheme) {
  // He scaling sqrt(2 / fan_in) for rectifier layers, sqrt(1 / fan_in) otherwise.
  for (auto act : {Activation::kRelu, Activation::kTanh}) {
    const Network net = init_network({64, 64, 64}, act, 3);
    const Matrix& w = net.layers[0].weight;
    const double mean = w.mean();
    const double sd = std::sqrt((w.array() - mean).square().sum() / static_cast<double>(w.size() - 1));
    const double target = std::sqrt((act == Activation::kRelu ? 2.0 : 1.0) / 64.0);
    EXPECT_NEAR(sd, target, 0.2 * target);
  }
}

TEST(Network, InvalidSizesRejected) {
  EXPECT_THROW(init_network({3}, Activation::kRelu, 0), std::invalid_argument);
  EXPECT_THROW(init_network({3, 0, 2}, Activation::kRelu, 0), std::invalid_argument);
}

TEST(Forward, ZeroNetworkGivesZeros) {
  Network net = init_network({2, 4, 3, 3}, Activation::kRelu, 0);
  for (auto& l : net.layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
  const auto r = forward(net, Vector::Ones(2));
  EXPECT_EQ(r.logits, Vector::Zero(3));
  EXPECT_EQ(r.feature, Vector::Zero(3));
}

TEST(Forward, RectifierKillsNegatives) {
  Network net = init_network({1, 1, 1}, Activation::kRelu, 0);
  for (auto& l : net.layers) {
    l.weight.setOnes();
    l.bias.setZero();
  }
  Vector x(1);
  x << -2.0;
  const auto r = forward(net, x);
  EXPECT_EQ(r.feature[0], 0.0);
  EXPECT_EQ(r.logits[0], 0.0);
}

TEST(Forward, Pure) {
  const Network net = init_network({2, 16, 3}, Activation::kTanh, 9);
  Vector x(2);
  x << 0.3, -1.2;
  EXPECT_EQ(forward(net, x).logits, forward(net, x).logits);
  EXPECT_THROW(forward(net, Vector::Ones(3)), DimensionError);
}

TEST(TrainClassifier, SeparableToyReachesZeroError) {
  LabeledSet s;
  s.inputs.resize(40, 2);
  for (int i = 0; i < 40; ++i) {
    const double sign = i % 2 ? 1.0 : -1.0;
    s.inputs.row(i) << sign * (1.0 + 0.01 * i), sign * (1.0 - 0.005 * i);
    s.labels.push_back(i % 2);
  }
  s.num_classes = 2;
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.batch_size = 8;
  cfg.optimizer.lr = 1e-2;
  auto [net, hist] = train_classifier(s, init_network({2, 2}, Activation::kIdentity, 1), cfg);
  EXPECT_EQ(classification_error(net, s), 0.0);
  for (const auto& e : hist.epochs) EXPECT_TRUE(std::isfinite(e.loss));
}

TEST(TrainClassifier, RejectsBadLabels) {
  LabeledSet s;
  s.inputs = Matrix::Zero(2, 2);
  s.labels = {0, 5};
  s.num_classes = 2;
  EXPECT_THROW(train_classifier(s, init_network({2, 2}, Activation::kRelu, 0), TrainConfig{}), std::out_of_range);
}

TEST(TrainClassifier, LossDecreasesAcrossWindows) {
  const auto data = doubleint::generate_bc_dataset(300, 10.0, 1);
  doubleint::ProbeConfig pc;
  pc.epochs = 300;
  auto [net, hist] = doubleint::train_probe(data, pc);
  auto window = [&](int from) {
    double s = 0.0;
    for (int e = from; e < from + 100; ++e) s += hist.epochs[static_cast<std::size_t>(e)].loss;
    return s / 100.0;
  };
  EXPECT_LE(window(100), window(0));
  EXPECT_LE(window(200), window(100));
}

TEST(TrainRegressor, FitsLinearMap) {
  Matrix x(100, 1), y(100, 1);
  for (int i = 0; i < 100; ++i) {
    x(i, 0) = -1.0 + 0.02 * i;
    y(i, 0) = 2.0 * x(i, 0);
  }
  TrainConfig cfg;
  cfg.epochs = 2000;
  cfg.batch_size = 100;
  cfg.optimizer.lr = 1e-2;
  auto [net, hist] = train_regressor(x, y, init_network({1, 1}, Activation::kIdentity, 0), cfg);
  EXPECT_LT((forward_batch(net, x) - y).squaredNorm() / 100.0, 1e-6);
}

TEST(TrainRegressor, ConstantTargets) {
  Matrix x = Matrix::Random(50, 2);
  Matrix y = Matrix::Constant(50, 1, 0.7);
  Network net = init_network({2, 1}, Activation::kIdentity, 4);
  TrainConfig cfg;
  cfg.epochs = 3000;
  cfg.batch_size = 50;
  cfg.optimizer.lr = 1e-2;
  auto [trained, hist] = train_regressor(x, y, net, cfg);
  EXPECT_LT((forward_batch(trained, x) - y).squaredNorm() / 50.0, 1e-8);
}

TEST(TrainRegressor, ZeroLearningRateLeavesParameters) {
  const Network net = init_network({3, 8, 2}, Activation::kRelu, 2);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.optimizer.lr = 0.0;
  auto [trained, hist] = train_regressor(Matrix::Random(10, 3), Matrix::Random(10, 2), net, cfg);
  EXPECT_EQ(trained, net);
}

TEST(FullBatchGradient, TinyNetMatchesFiniteDifferences) {
  const Network net = init_network({2, 4, 3, 3}, Activation::kTanh, 17);
  RngStream rng(1);
  Matrix x(8, 2);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-2, 2);
  const std::vector<int> labels{0, 1, 2, 0, 1, 2, 1, 0};
  Tape t;
  const BoundNetwork b = bind(t, net);
  t.backward(t.softmax_cross_entropy(apply(t, net, b, t.constant(x)), labels));
  const Vector g = flatten(gradients(t, b));
  const Vector fd = finite_difference_gradient(
      [&](const Vector& theta) {
        Network n = net;
        unflatten(n, theta);
        Tape tt;
        const BoundNetwork bb = bind(tt, n);
        return tt.scalar_value(tt.softmax_cross_entropy(apply(tt, n, bb, tt.constant(x)), labels));
      },
      flatten(net), 1e-5);
  for (Eigen::Index i = 0; i < g.size(); ++i) EXPECT_LE(std::abs(g[i] - fd[i]) / std::max(1.0, std::abs(g[i])), 1e-5);
}

TEST(WeightDecay, ShrinksWeightsWithoutGradient) {
  Network net = init_network({2, 2}, Activation::kIdentity, 0);
  const Matrix w0 = net.layers[0].weight;
  OptimizerConfig oc;
  oc.lr = 0.1;
  oc.weight_decay = 1.0;
  Optimizer opt(net, oc);
  NetworkGrads g{{Matrix::Zero(2, 2)}, {Matrix::Zero(1, 2)}};
  opt.step(net, g);
  EXPECT_TRUE(net.layers[0].weight.isApprox(0.9 * w0, 1e-15));
}

TEST(ExtractFeatures, DoubleIntegratorShapes) {
  const auto d = doubleint::generate_bc_dataset(50, 10.0, 0);
  const auto ls = d.labeled();
  const Network net = init_network(doubleint::probe_layer_sizes(), Activation::kTanh, 0);
  const FeatureSet fs = extract_features(net, ls.inputs, ls.labels, 3);
  EXPECT_EQ(fs.num_classes, 3);
  EXPECT_EQ(fs.size(), 150);
  EXPECT_EQ(fs.dim(), 3);
}

TEST(ExtractFeatures, EmptyClassRejected) {
  const Network net = init_network({2, 3, 3}, Activation::kRelu, 0);
  EXPECT_THROW(extract_features(net, Matrix::Zero(2, 2), {0, 0}, 3), std::invalid_argument);
  EXPECT_THROW(extract_features(net, Matrix::Zero(2, 2), {0}, 3), DimensionError);
}

TEST(ExtractFeatures, DoesNotPerturbTraining) {
  const auto d = doubleint::generate_bc_dataset(100, 10.0, 3);
  const auto ls = d.labeled();
  doubleint::ProbeConfig pc;
  pc.epochs = 5;
  auto [a, ha] = doubleint::train_probe(d, pc);
  auto [b, hb] = doubleint::train_probe(d, pc, [&](int, const Network& n) { extract_features(n, ls.inputs, ls.labels, 3); });
  EXPECT_EQ(a, b);
}
