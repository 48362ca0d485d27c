#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "ncprobe/linalg.hpp"
#include "ncprobe/mlp.hpp"
#include "ncprobe/rng.hpp"
#include "ncprobe/tape.hpp"

using namespace ncprobe;

namespace {

using Builder = std::function<NodeId(Tape&, const std::vector<NodeId>&)>;

Matrix random_matrix(RngStream& rng, Eigen::Index r, Eigen::Index c, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

// Reduces a matrix output to a scalar with fixed random weights so every
// output entry contributes to the checked gradient.
NodeId reduce(Tape& t, NodeId out, const Matrix& weights) {
  const Matrix& v = t.value(out);
  if (v.size() == 1) return out;
  return t.sum(t.mul(out, t.constant(weights.topLeftCorner(v.rows(), v.cols()))));
}

// Max over inputs of |tape - fd| / max(1, |tape|).
double gradient_error(const Builder& build, const std::vector<Matrix>& inputs, RngStream& rng) {
  const Matrix weights = random_matrix(rng, 16, 16);
  Tape tape;
  std::vector<NodeId> leaves;
  for (const auto& m : inputs) leaves.push_back(tape.leaf(m));
  const NodeId out = reduce(tape, build(tape, leaves), weights);
  tape.backward(out);

  Eigen::Index total = 0;
  for (const auto& m : inputs) total += m.size();
  Vector flat(total), analytic(total);
  Eigen::Index k = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (Eigen::Index j = 0; j < inputs[i].size(); ++j, ++k) {
      flat[k] = inputs[i].data()[j];
      analytic[k] = tape.grad(leaves[i]).data()[j];
    }
  }
  auto f = [&](const Vector& x) {
    Tape t;
    std::vector<NodeId> ls;
    Eigen::Index o = 0;
    for (const auto& m : inputs) {
      Matrix v = m;
      for (Eigen::Index j = 0; j < v.size(); ++j) v.data()[j] = x[o++];
      ls.push_back(t.leaf(std::move(v)));
    }
    return t.scalar_value(reduce(t, build(t, ls), weights));
  };
  const Vector fd = finite_difference_gradient(f, flat, 1e-5);
  double err = 0.0;
  for (Eigen::Index i = 0; i < total; ++i)
    err = std::max(err, std::abs(analytic[i] - fd[i]) / std::max(1.0, std::abs(analytic[i])));
  return err;
}

struct PrimitiveCase {
  const char* name;
  int arity;
  Builder build;
  double lo, hi;  // input range
};

}  // namespace

TEST(SoftmaxXent, UniformLogits) { EXPECT_NEAR(softmax_cross_entropy(Vector::Zero(3), 0), std::log(3.0), 1e-15); }

TEST(SoftmaxXent, ConfidentCorrect) {
  Vector z(3);
  z << 10, -10, -10;
  EXPECT_NEAR(softmax_cross_entropy(z, 0), 2.0 * std::exp(-20.0), 1e-12);
  EXPECT_NEAR(softmax_cross_entropy(z, 0), 4.12e-9, 1e-11);
}

TEST(SoftmaxXent, MatchesDirectFormula) {
  Vector z(3);
  z << 1, 2, 3;
  const long double ref = -std::log(std::exp(3.0L) / (std::exp(1.0L) + std::exp(2.0L) + std::exp(3.0L)));
  EXPECT_NEAR(softmax_cross_entropy(z, 2), static_cast<double>(ref), 1e-15);
}

TEST(SoftmaxXent, LargeLogitsStayFinite) {
  Vector z(2);
  z << 1000, -1000;
  EXPECT_TRUE(std::isfinite(softmax_cross_entropy(z, 1)));
  EXPECT_THROW(softmax_cross_entropy(z, 2), std::out_of_range);
}

TEST(Tape, SquareGradient) {
  Tape t;
  const NodeId x = t.leaf(Matrix::Constant(1, 1, 3.0));
  const NodeId y = t.mul(x, x);
  t.backward(y);
  EXPECT_DOUBLE_EQ(t.grad(x)(0, 0), 6.0);
}

TEST(Tape, SquaredNormGradient) {
  Tape t;
  Matrix v(1, 2);
  v << 1, 2;
  const NodeId x = t.leaf(v);
  t.backward(t.squared_norm(x));
  EXPECT_DOUBLE_EQ(t.grad(x)(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(t.grad(x)(0, 1), 4.0);
}

TEST(Tape, ConstantsGetNoGradient) {
  Tape t;
  const NodeId c = t.constant(Matrix::Constant(1, 1, 2.0));
  const NodeId x = t.leaf(Matrix::Constant(1, 1, 5.0));
  t.backward(t.mul(c, x));
  EXPECT_DOUBLE_EQ(t.grad(x)(0, 0), 2.0);
  EXPECT_FALSE(t.requires_grad(c));
}

TEST(Tape, ShapeMismatchRejected) {
  Tape t;
  const NodeId a = t.leaf(Matrix::Zero(2, 3));
  const NodeId b = t.leaf(Matrix::Zero(3, 2));
  EXPECT_THROW(t.add(a, b), DimensionError);
  EXPECT_THROW(t.mul(a, b), DimensionError);
  EXPECT_THROW(t.affine(a, t.leaf(Matrix::Zero(4, 2)), t.leaf(Matrix::Zero(1, 4))), DimensionError);
  EXPECT_THROW(t.sub_row(a, t.leaf(Matrix::Zero(1, 2))), DimensionError);
}

TEST(Tape, BackwardNeedsScalar) {
  Tape t;
  const NodeId a = t.leaf(Matrix::Zero(2, 2));
  EXPECT_THROW(t.backward(a), std::exception);
}

TEST(Tape, GradientsDoNotAccumulateAcrossBackwardCalls) {
  Tape t;
  const NodeId x = t.leaf(Matrix::Constant(1, 1, 2.0));
  const NodeId y = t.mul(x, x);
  t.backward(y);
  t.backward(y);
  EXPECT_DOUBLE_EQ(t.grad(x)(0, 0), 4.0);
}

TEST(FiniteDifference, Cube) {
  Vector x(1);
  x << 2.0;
  const Vector g = finite_difference_gradient([](const Vector& v) { return v[0] * v[0] * v[0]; }, x, 1e-5);
  EXPECT_NEAR(g[0], 12.0, 1e-6);
}

TEST(FiniteDifference, ConstantAndSum) {
  Vector x = Vector::LinSpaced(4, -1.0, 2.0);
  EXPECT_EQ(finite_difference_gradient([](const Vector&) { return 3.0; }, x, 1e-5), Vector::Zero(4));
  const Vector g = finite_difference_gradient([](const Vector& v) { return v.sum(); }, x, 1e-5);
  for (Eigen::Index i = 0; i < 4; ++i) EXPECT_NEAR(g[i], 1.0, 1e-9);
}

// Every differentiable primitive against central differences, 100 random
// cases each with random shapes.
TEST(Tape, PrimitiveGradientsMatchFiniteDifferences) {
  const std::vector<PrimitiveCase> cases = {
      {"relu", 1, [](Tape& t, const auto& x) { return t.relu(x[0]); }, -1.0, 1.0},
      {"tanh", 1, [](Tape& t, const auto& x) { return t.tanh(x[0]); }, -2.0, 2.0},
      {"add", 2, [](Tape& t, const auto& x) { return t.add(x[0], x[1]); }, -1.0, 1.0},
      {"sub", 2, [](Tape& t, const auto& x) { return t.sub(x[0], x[1]); }, -1.0, 1.0},
      {"mul", 2, [](Tape& t, const auto& x) { return t.mul(x[0], x[1]); }, -1.0, 1.0},
      {"div", 2, [](Tape& t, const auto& x) { return t.div(x[0], t.add_const(t.mul(x[1], x[1]), 0.5)); }, -1.0, 1.0},
      {"scale", 1, [](Tape& t, const auto& x) { return t.scale(x[0], -2.5); }, -1.0, 1.0},
      {"add_const", 1, [](Tape& t, const auto& x) { return t.mul(t.add_const(x[0], 0.7), x[0]); }, -1.0, 1.0},
      {"sqrt", 1, [](Tape& t, const auto& x) { return t.sqrt(x[0]); }, 0.2, 2.0},
      {"sum", 1, [](Tape& t, const auto& x) { return t.sum(t.mul(x[0], x[0])); }, -1.0, 1.0},
      {"mean", 1, [](Tape& t, const auto& x) { return t.mean(t.mul(x[0], x[0])); }, -1.0, 1.0},
      {"squared_norm", 1, [](Tape& t, const auto& x) { return t.squared_norm(x[0]); }, -1.0, 1.0},
      {"select_rows", 1,
       [](Tape& t, const auto& x) {
         const auto r = t.value(x[0]).rows();
         return t.select_rows(x[0], {static_cast<int>(r - 1), 0, static_cast<int>(r - 1)});
       },
       -1.0, 1.0},
      {"mean_rows", 1, [](Tape& t, const auto& x) { return t.mean_rows(x[0]); }, -1.0, 1.0},
      {"sub_row", 1, [](Tape& t, const auto& x) { return t.sub_row(x[0], t.mean_rows(x[0])); }, -1.0, 1.0},
  };
  RngStream rng(2024);
  for (const auto& c : cases) {
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const auto r = static_cast<Eigen::Index>(1 + rng.below(4));
      const auto k = static_cast<Eigen::Index>(1 + rng.below(4));
      std::vector<Matrix> in;
      for (int a = 0; a < c.arity; ++a) {
        Matrix m = random_matrix(rng, r, k, c.lo, c.hi);
        // Keep relu inputs away from the kink.
        if (std::string(c.name) == "relu")
          for (Eigen::Index i = 0; i < m.size(); ++i)
            if (std::abs(m.data()[i]) < 0.05) m.data()[i] = 0.5;
        in.push_back(m);
      }
      worst = std::max(worst, gradient_error(c.build, in, rng));
    }
    EXPECT_LE(worst, 1e-5) << c.name;
  }
}

TEST(Tape, AffineAndCrossEntropyGradients) {
  RngStream rng(99);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto b = static_cast<Eigen::Index>(1 + rng.below(5));
    const auto in = static_cast<Eigen::Index>(1 + rng.below(4));
    const auto out = static_cast<Eigen::Index>(2 + rng.below(3));
    std::vector<int> labels;
    for (Eigen::Index i = 0; i < b; ++i) labels.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(out))));
    const Builder affine = [](Tape& t, const auto& x) { return t.affine(x[0], x[1], x[2]); };
    const Builder xent = [labels](Tape& t, const auto& x) {
      return t.softmax_cross_entropy(t.affine(x[0], x[1], x[2]), labels);
    };
    const std::vector<Matrix> args{random_matrix(rng, b, in), random_matrix(rng, out, in), random_matrix(rng, 1, out)};
    worst = std::max(worst, gradient_error(affine, args, rng));
    worst = std::max(worst, gradient_error(xent, args, rng));
  }
  EXPECT_LE(worst, 1e-5);
}

TEST(Tape, RandomThreeLayerNetworkLoss) {
  RngStream rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Network net = init_network({3, 5, 4, 3}, trial % 2 ? Activation::kTanh : Activation::kRelu, 100 + trial);
    const Matrix x = random_matrix(rng, 6, 3);
    const std::vector<int> labels{0, 1, 2, 0, 1, 2};
    auto loss_of = [&](const Vector& theta) {
      Network n = net;
      unflatten(n, theta);
      Tape t;
      const BoundNetwork bound = bind(t, n);
      return t.scalar_value(t.softmax_cross_entropy(apply(t, n, bound, t.constant(x)), labels));
    };
    Tape t;
    const BoundNetwork bound = bind(t, net);
    t.backward(t.softmax_cross_entropy(apply(t, net, bound, t.constant(x)), labels));
    const Vector g = flatten(gradients(t, bound));
    const Vector fd = finite_difference_gradient(loss_of, flatten(net), 1e-5);
    double err = 0.0;
    for (Eigen::Index i = 0; i < g.size(); ++i) err = std::max(err, std::abs(g[i] - fd[i]) / std::max(1.0, std::abs(g[i])));
    EXPECT_LE(err, 1e-5) << "trial " << trial;
  }
}
