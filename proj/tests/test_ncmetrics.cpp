#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "ncprobe/ncmetrics.hpp"
#include "ncprobe/rng.hpp"

using namespace ncprobe;

namespace {

FeatureSet one_d(const std::vector<double>& a, const std::vector<double>& b) {
  FeatureSet fs;
  fs.features.resize(static_cast<Eigen::Index>(a.size() + b.size()), 1);
  Eigen::Index i = 0;
  for (double x : a) {
    fs.features(i++, 0) = x;
    fs.labels.push_back(0);
  }
  for (double x : b) {
    fs.features(i++, 0) = x;
    fs.labels.push_back(1);
  }
  fs.num_classes = 2;
  return fs;
}

// Rows of a simplex ETF with C vertices in C dimensions, centered at 0.
Matrix simplex(int c) {
  Matrix m = Matrix::Identity(c, c);
  m.rowwise() -= m.colwise().mean();
  return m;
}

FeatureSet random_set(RngStream& r, int c, int d, int max_per_class) {
  FeatureSet fs;
  fs.num_classes = c;
  std::vector<std::vector<double>> rows;
  for (int k = 0; k < c; ++k) {
    const int m = 2 + static_cast<int>(r.below(static_cast<std::uint64_t>(max_per_class - 1)));
    std::vector<double> centre(static_cast<std::size_t>(d));
    for (auto& x : centre) x = r.uniform(-3, 3);
    for (int i = 0; i < m; ++i) {
      std::vector<double> row(centre);
      for (auto& x : row) x += r.normal();
      rows.push_back(row);
      fs.labels.push_back(k);
    }
  }
  fs.features.resize(static_cast<Eigen::Index>(rows.size()), d);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (int j = 0; j < d; ++j) fs.features(static_cast<Eigen::Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
  return fs;
}

struct Reference {
  double cdnv;
  double std_norm;
  double std_angle;
};

// Plain-loop reference with no shared code paths.
Reference reference(const FeatureSet& fs) {
  const int c = fs.num_classes;
  const auto n = static_cast<std::size_t>(fs.size());
  const auto d = static_cast<std::size_t>(fs.dim());
  std::vector<std::vector<double>> mu(static_cast<std::size_t>(c), std::vector<double>(d, 0.0));
  std::vector<double> g(d, 0.0);
  std::vector<int> cnt(static_cast<std::size_t>(c), 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto l = static_cast<std::size_t>(fs.labels[i]);
    ++cnt[l];
    for (std::size_t j = 0; j < d; ++j) {
      mu[l][j] += fs.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      g[j] += fs.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) / static_cast<double>(n);
    }
  }
  for (int k = 0; k < c; ++k)
    for (auto& x : mu[static_cast<std::size_t>(k)]) x /= cnt[static_cast<std::size_t>(k)];
  std::vector<double> var(static_cast<std::size_t>(c), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto l = static_cast<std::size_t>(fs.labels[i]);
    for (std::size_t j = 0; j < d; ++j) {
      const double e = fs.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) - mu[l][j];
      var[l] += e * e;
    }
  }
  for (int k = 0; k < c; ++k) var[static_cast<std::size_t>(k)] /= cnt[static_cast<std::size_t>(k)] - 1;

  auto centered = [&](int k, std::size_t j) { return mu[static_cast<std::size_t>(k)][j] - g[j]; };
  double cd = 0.0;
  int pairs = 0;
  std::vector<double> cosines;
  std::vector<double> norms;
  for (int a = 0; a < c; ++a) {
    double na = 0.0;
    for (std::size_t j = 0; j < d; ++j) na += centered(a, j) * centered(a, j);
    norms.push_back(std::sqrt(na));
  }
  for (int a = 0; a < c; ++a) {
    for (int b = a + 1; b < c; ++b) {
      double d2 = 0.0, dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        d2 += (centered(a, j) - centered(b, j)) * (centered(a, j) - centered(b, j));
        dot += centered(a, j) * centered(b, j);
      }
      cd += (var[static_cast<std::size_t>(a)] + var[static_cast<std::size_t>(b)]) / (2 * d2);
      cosines.push_back(dot / (norms[static_cast<std::size_t>(a)] * norms[static_cast<std::size_t>(b)]));
      ++pairs;
    }
  }
  auto pstd = [](const std::vector<double>& v) {
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::pair{std::sqrt(s / static_cast<double>(v.size())), m};
  };
  const auto [ns, nm] = pstd(norms);
  return {cd / pairs, ns / nm, pstd(cosines).first};
}

// Relative error. Below 1e-4 the metrics lose digits to cancellation in x - mean,
// so small values compare with an absolute floor of 1e-14.
double rel(double a, double b) { return std::abs(a - b) / std::max(1e-4, std::max(std::abs(a), std::abs(b))); }

}  // namespace

TEST(ClassMeans, OneDimensionalExample) {
  const ClassMeans cm = class_means(one_d({0, 2}, {4, 6}));
  EXPECT_DOUBLE_EQ(cm.means(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(cm.means(1, 0), 5.0);
  EXPECT_DOUBLE_EQ(cm.global(0), 3.0);
}

TEST(ClassMeans, GlobalMeanWeightsByCount) {
  const ClassMeans cm = class_means(one_d({0, 0, 0}, {4}));
  EXPECT_DOUBLE_EQ(cm.global(0), 1.0);
}

TEST(ClassMeans, EmptyClassRejected) {
  FeatureSet fs = one_d({0, 1}, {2, 3});
  fs.num_classes = 3;
  EXPECT_THROW(class_means(fs), std::invalid_argument);
}

TEST(Cdnv, OneDimensionalExample) { EXPECT_DOUBLE_EQ(cdnv(one_d({0, 2}, {4, 6})).mean, 0.125); }

TEST(Cdnv, ZeroVarianceIsZero) { EXPECT_EQ(cdnv(one_d({1, 1}, {3, 3})).mean, 0.0); }

TEST(Cdnv, CoincidentMeansIsDegeneratePair) {
  try {
    cdnv(one_d({0, 2}, {1, 1}));
    FAIL() << "expected DegeneratePairError";
  } catch (const DegeneratePairError& e) {
    EXPECT_EQ(e.first, 0);
    EXPECT_EQ(e.second, 1);
  }
}

TEST(Cdnv, OrderedPairMeanEqualsUnordered) {
  RngStream r(1);
  const FeatureSet fs = random_set(r, 4, 3, 10);
  const CdnvResult cd = cdnv(fs);
  double ordered = 0.0;
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b)
      if (a != b) ordered += cd.pairs(a, b);
  EXPECT_NEAR(ordered / 12.0, cd.mean, 1e-12);
}

TEST(StdNorm, NormsOneAndThree) {
  // Counts 3 and 1 put the weighted global mean at 0, leaving centered norms 1 and 3.
  FeatureSet fs;
  fs.features.resize(4, 1);
  fs.features << 1, 1, 1, -3;
  fs.labels = {0, 0, 0, 1};
  fs.num_classes = 2;
  EXPECT_DOUBLE_EQ(std_norm(fs), 0.5);
}

TEST(StdNorm, UnequalNormsExample) {
  // Centered means (1, 0), (0, 3), (-1, -3) around a zero global mean.
  FeatureSet fs;
  fs.features.resize(6, 2);
  fs.features << 1, 0, 1, 0, 0, 3, 0, 3, -1, -3, -1, -3;
  fs.labels = {0, 0, 1, 1, 2, 2};
  fs.num_classes = 3;
  const ClassMeans cm = class_means(fs);
  ASSERT_LT(cm.global.norm(), 1e-15);
  const double n[] = {1.0, 3.0, std::sqrt(10.0)};
  const double mean = (n[0] + n[1] + n[2]) / 3.0;
  const double var = ((n[0] - mean) * (n[0] - mean) + (n[1] - mean) * (n[1] - mean) + (n[2] - mean) * (n[2] - mean)) / 3.0;
  EXPECT_NEAR(std_norm(fs), std::sqrt(var) / mean, 1e-14);
  EXPECT_NEAR(std_norm(fs), reference(fs).std_norm, 1e-12);
}

TEST(StdAngle, TwoClassesAlwaysZero) {
  RngStream r(3);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(std_angle(random_set(r, 2, 4, 8)), 0.0);
}

TEST(StdAngle, ZeroCenteredMeanRejected) {
  FeatureSet fs;
  fs.features.resize(6, 1);
  fs.features << -1, -1, 0, 0, 1, 1;
  fs.labels = {0, 0, 1, 1, 2, 2};
  fs.num_classes = 3;
  EXPECT_THROW(std_angle(fs), ZeroMeanError);
}

TEST(Report, SimplexEtfIsCollapsed) {
  for (int c = 2; c <= 6; ++c) {
    const Matrix etf = simplex(c);
    FeatureSet fs;
    fs.num_classes = c;
    fs.features.resize(3 * c, c);
    for (int k = 0; k < c; ++k)
      for (int i = 0; i < 3; ++i) {
        fs.features.row(3 * k + i) = etf.row(k);
        fs.labels.push_back(k);
      }
    const NCReport r = nc_report(fs);
    EXPECT_LE(r.cdnv_mean, 1e-24);
    EXPECT_LE(r.std_norm, 1e-12);
    EXPECT_LE(r.std_angle, 1e-12);
    for (int a = 0; a < c; ++a)
      for (int b = a + 1; b < c; ++b) EXPECT_NEAR(r.cosines(a, b), -1.0 / (c - 1), 1e-12);
  }
}

TEST(Report, MatchesReferenceOnRandomSets) {
  RngStream r(4);
  for (int trial = 0; trial < 500; ++trial) {
    const int c = 2 + static_cast<int>(r.below(4));
    const int d = 1 + static_cast<int>(r.below(8));
    const FeatureSet fs = random_set(r, c, d, 20);
    const NCReport rep = nc_report(fs);
    const Reference ref = reference(fs);
    ASSERT_LE(rel(rep.cdnv_mean, ref.cdnv), 1e-10);
    ASSERT_LE(rel(rep.std_norm, ref.std_norm), 1e-10);
    if (c > 2) {
      ASSERT_LE(rel(rep.std_angle, ref.std_angle), 1e-10);
    } else {
      ASSERT_LE(rep.std_angle, 1e-12);
    }
  }
}

TEST(Report, InvariantToRigidMotionAndPermutation) {
  RngStream r(5);
  for (int trial = 0; trial < 50; ++trial) {
    FeatureSet fs = random_set(r, 4, 3, 10);
    const NCReport a = nc_report(fs);
    // Random orthogonal matrix from a QR decomposition, plus a shift.
    Matrix g(3, 3);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = r.normal();
    const Matrix q = Eigen::HouseholderQR<Matrix>(g).householderQ();
    FeatureSet moved = fs;
    moved.features = (fs.features * q).rowwise() + Eigen::RowVector3d(r.normal(), r.normal(), r.normal());
    const NCReport b = nc_report(moved);
    EXPECT_NEAR(a.cdnv_mean, b.cdnv_mean, 1e-9);
    EXPECT_NEAR(a.std_norm, b.std_norm, 1e-9);
    EXPECT_NEAR(a.std_angle, b.std_angle, 1e-9);
    std::vector<int> perm(static_cast<std::size_t>(fs.size()));
    std::iota(perm.begin(), perm.end(), 0);
    r.shuffle(perm.begin(), perm.end());
    FeatureSet shuffled = fs;
    for (std::size_t i = 0; i < perm.size(); ++i) {
      shuffled.features.row(static_cast<Eigen::Index>(i)) = fs.features.row(perm[i]);
      shuffled.labels[i] = fs.labels[static_cast<std::size_t>(perm[i])];
    }
    const NCReport s = nc_report(shuffled);
    EXPECT_NEAR(a.cdnv_mean, s.cdnv_mean, 1e-12);
    EXPECT_NEAR(a.std_norm, s.std_norm, 1e-12);
    EXPECT_NEAR(a.std_angle, s.std_angle, 1e-12);
  }
}

TEST(Report, NonNegative) {
  RngStream r(6);
  for (int i = 0; i < 100; ++i) {
    const NCReport rep = nc_report(random_set(r, 3, 2, 6));
    EXPECT_GE(rep.cdnv_mean, 0.0);
    EXPECT_GE(rep.std_norm, 0.0);
    EXPECT_GE(rep.std_angle, 0.0);
  }
}

TEST(Loss, ZeroWithZeroGradientAtEtf) {
  const Matrix etf = simplex(4) * 3.0;
  Matrix f(8, 4);
  std::vector<int> labels;
  for (int k = 0; k < 4; ++k) {
    f.row(2 * k) = f.row(2 * k + 1) = etf.row(k);
    labels.push_back(k);
    labels.push_back(k);
  }
  Tape t;
  const NodeId x = t.leaf(f);
  const NCLossNodes n = nc_loss(t, x, labels, NCWeights{});
  t.backward(n.total);
  EXPECT_LE(std::abs(t.scalar_value(n.total)), 1e-12);
  EXPECT_LE(t.grad(x).norm(), 1e-6);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  RngStream r(7);
  for (int trial = 0; trial < 20; ++trial) {
    const FeatureSet fs = random_set(r, 3 + static_cast<int>(r.below(2)), 3, 6);
    Tape t;
    const NodeId x = t.leaf(fs.features);
    t.backward(nc_loss(t, x, fs.labels, NCWeights{}).total);
    const Matrix g = t.grad(x);
    const Vector flat = Eigen::Map<const Vector>(fs.features.data(), fs.features.size());
    const Vector fd = finite_difference_gradient(
        [&](const Vector& v) {
          Tape tt;
          const NodeId xx = tt.leaf(Eigen::Map<const Matrix>(v.data(), fs.features.rows(), fs.features.cols()));
          return tt.scalar_value(nc_loss(tt, xx, fs.labels, NCWeights{}).total);
        },
        flat, 1e-6);
    for (Eigen::Index i = 0; i < fd.size(); ++i)
      ASSERT_LE(std::abs(g.data()[i] - fd[i]) / std::max(1.0, std::abs(g.data()[i])), 1e-5);
  }
}

TEST(Loss, SpreadTermsAreScaleInvariant) {
  RngStream r(8);
  const FeatureSet fs = random_set(r, 4, 5, 8);
  Tape t;
  const NCLossNodes a = nc_loss(t, t.constant(fs.features), fs.labels, NCWeights{});
  const NCLossNodes b = nc_loss(t, t.constant(2.0 * fs.features), fs.labels, NCWeights{});
  EXPECT_NEAR(t.scalar_value(a.std_norm), t.scalar_value(b.std_norm), 1e-9);
  EXPECT_NEAR(t.scalar_value(a.std_angle), t.scalar_value(b.std_angle), 1e-9);
}

TEST(Loss, TracksReportMetrics) {
  // Away from the guards the batch loss terms follow the report: cdnv up to the
  // distance epsilon, and the spread terms through sqrt(x^2 + eps) - sqrt(eps).
  RngStream r(9);
  const FeatureSet fs = random_set(r, 4, 4, 10);
  const NCReport rep = nc_report(fs);
  Tape t;
  const NCLossNodes n = nc_loss(t, t.constant(fs.features), fs.labels, NCWeights{});
  EXPECT_NEAR(t.scalar_value(n.cdnv), rep.cdnv_mean, 1e-6 * rep.cdnv_mean);
  EXPECT_NEAR(t.scalar_value(n.std_norm), rep.std_norm, 1e-4);
  EXPECT_NEAR(t.scalar_value(n.std_angle), rep.std_angle, 1e-4);
}

TEST(Loss, SingletonClassesDropped) {
  Matrix f(5, 2);
  f << 0, 0, 0.1, 0, 3, 3, 3.1, 3, 9, 9;
  Tape t;
  const NCLossNodes n = nc_loss(t, t.constant(f), {0, 0, 1, 1, 2}, NCWeights{});
  EXPECT_EQ(n.classes_used, 2);
  EXPECT_THROW(nc_loss(t, t.constant(f), {0, 0, 0, 0, 1}, NCWeights{}), std::invalid_argument);
}
