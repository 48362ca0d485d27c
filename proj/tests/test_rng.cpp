#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "ncprobe/rng.hpp"

using namespace ncprobe;

TEST(Rng, SameSeedSameStream) {
  RngStream a(42), b(42);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, SplitSeedsDiffer) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 1000; ++i) seen.insert(split_seed(7, i));
  EXPECT_EQ(seen.size(), 1000u);
  EXPECT_EQ(RngStream(3).split(5).next_u64(), RngStream(split_seed(3, 5)).next_u64());
}

TEST(Rng, UniformInUnitInterval) {
  RngStream r(1);
  double sum = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / 100000, 0.5, 0.01);
}

TEST(Rng, BelowIsInRangeAndCoversIt) {
  RngStream r(2);
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 7000; ++i) {
    const auto k = r.below(7);
    ASSERT_LT(k, 7u);
    ++hits[k];
  }
  for (int h : hits) EXPECT_GT(h, 800);
}

TEST(Rng, NormalMoments) {
  RngStream r(3);
  double s = 0.0, s2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Rng, ShuffleIsPermutation) {
  RngStream r(4);
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  auto w = v;
  r.shuffle(w.begin(), w.end());
  EXPECT_NE(v, w);
  std::sort(w.begin(), w.end());
  EXPECT_EQ(v, w);
}

TEST(Rng, BallSampleBoundedByRadius) {
  RngStream r(1);
  for (int i = 0; i < 1000; ++i) EXPECT_LE(sample_in_ball(r, 10.0, 2).norm(), 10.0);
}

TEST(Rng, BallSampleMeanNearOrigin) {
  RngStream r(11);
  Eigen::VectorXd m = Eigen::VectorXd::Zero(2);
  const int n = 100000;
  for (int i = 0; i < n; ++i) m += sample_in_ball(r, 10.0, 2);
  EXPECT_LT((m / n).norm(), 0.1);
}

TEST(Rng, BallSampleDeterministic) {
  RngStream a(7), b(7);
  EXPECT_EQ(sample_in_ball(a, 1.0, 2), sample_in_ball(b, 1.0, 2));
}
