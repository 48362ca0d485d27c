#pragma once

// k-means (k-means++ seeding, Lloyd iterations) and silhouette analysis.

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "ncprobe/demo.hpp"
#include "ncprobe/linalg.hpp"
#include "ncprobe/parallel.hpp"
#include "ncprobe/rng.hpp"

namespace ncprobe {

struct KMeansResult {
  std::vector<int> labels;
  Matrix centroids;            // k x d
  double inertia = 0.0;
  std::vector<double> history;  // inertia after each assignment step
  int iterations = 0;
};

namespace detail {

inline double assign(const Matrix& points, const Matrix& centroids, std::vector<int>& labels) {
  double inertia = 0.0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
      const double d = (points.row(i) - centroids.row(c)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(c);
      }
    }
    labels[static_cast<std::size_t>(i)] = best;
    inertia += best_d;
  }
  return inertia;
}

inline Matrix kmeanspp(const Matrix& points, int k, RngStream& rng) {
  const auto n = points.rows();
  Matrix centroids(k, points.cols());
  centroids.row(0) = points.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n))));
  Vector d2(n);
  for (Eigen::Index i = 0; i < n; ++i) d2(i) = (points.row(i) - centroids.row(0)).squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double u = rng.uniform() * total;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        u -= d2(i);
        if (u < 0.0 && d2(i) > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
    }
    centroids.row(c) = points.row(pick);
    for (Eigen::Index i = 0; i < n; ++i) d2(i) = std::min(d2(i), (points.row(i) - centroids.row(c)).squaredNorm());
  }
  return centroids;
}

}  // namespace detail

/// Points are the rows of `points`.
inline KMeansResult kmeans(const Matrix& points, int k, std::uint64_t seed, int max_iters = 300) {
  if (points.rows() == 0) throw std::invalid_argument("kmeans: empty input");
  if (k < 1 || k > points.rows()) {
    throw std::invalid_argument("kmeans: k=" + std::to_string(k) + " outside [1, " + std::to_string(points.rows()) +
                                "]");
  }
  RngStream rng(seed);
  KMeansResult r;
  r.centroids = detail::kmeanspp(points, k, rng);
  r.labels.assign(static_cast<std::size_t>(points.rows()), -1);
  std::vector<int> prev;
  bool converged = false;
  for (int it = 0; it < max_iters; ++it) {
    prev = r.labels;
    r.inertia = detail::assign(points, r.centroids, r.labels);
    r.history.push_back(r.inertia);
    r.iterations = it + 1;
    if (r.labels == prev) {
      converged = true;
      break;
    }
    Matrix sums = Matrix::Zero(k, points.cols());
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
      sums.row(r.labels[static_cast<std::size_t>(i)]) += points.row(i);
      ++counts[static_cast<std::size_t>(r.labels[static_cast<std::size_t>(i)])];
    }
    // Empty clusters keep their previous centroid.
    for (int c = 0; c < k; ++c)
      if (counts[static_cast<std::size_t>(c)] > 0) r.centroids.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
  }
  if (!converged) {
    r.inertia = 0.0;
    for (Eigen::Index i = 0; i < points.rows(); ++i)
      r.inertia += (points.row(i) - r.centroids.row(r.labels[static_cast<std::size_t>(i)])).squaredNorm();
    r.history.push_back(r.inertia);
  }
  return r;
}

/// Lowest-inertia result over `restarts` seeds split from `seed`.
inline KMeansResult kmeans_best(const Matrix& points, int k, std::uint64_t seed, int restarts = 5,
                                int max_iters = 300) {
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < std::max(1, restarts); ++r) {
    KMeansResult cur = kmeans(points, k, split_seed(seed, static_cast<std::uint64_t>(r)), max_iters);
    if (cur.inertia < best.inertia) best = std::move(cur);
  }
  return best;
}

/// Per-point silhouette scores. Singleton clusters score 0, as do points with
/// a = b = 0.
inline std::vector<double> silhouette_scores(const Matrix& points, const std::vector<int>& labels) {
  const auto n = points.rows();
  if (static_cast<Eigen::Index>(labels.size()) != n) throw DimensionError("silhouette: label count mismatch");
  int k = 0;
  for (int l : labels) {
    if (l < 0) throw std::out_of_range("silhouette: negative label");
    k = std::max(k, l + 1);
  }
  std::vector<int> sizes(static_cast<std::size_t>(k), 0);
  for (int l : labels) ++sizes[static_cast<std::size_t>(l)];
  int nonempty = 0;
  for (int s : sizes) nonempty += s > 0;
  if (nonempty < 2) throw std::invalid_argument("silhouette: need at least 2 nonempty clusters");

  std::vector<double> scores(static_cast<std::size_t>(n), 0.0);
  std::vector<double> dist_sum(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < n; ++i) {
    const int own = labels[static_cast<std::size_t>(i)];
    if (sizes[static_cast<std::size_t>(own)] == 1) continue;
    std::fill(dist_sum.begin(), dist_sum.end(), 0.0);
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i) dist_sum[static_cast<std::size_t>(labels[static_cast<std::size_t>(j)])] += (points.row(i) - points.row(j)).norm();
    }
    const double a = dist_sum[static_cast<std::size_t>(own)] / (sizes[static_cast<std::size_t>(own)] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
      if (c != own && sizes[static_cast<std::size_t>(c)] > 0) b = std::min(b, dist_sum[static_cast<std::size_t>(c)] / sizes[static_cast<std::size_t>(c)]);
    }
    const double m = std::max(a, b);
    scores[static_cast<std::size_t>(i)] = m > 0.0 ? (b - a) / m : 0.0;
  }
  return scores;
}

inline double silhouette_mean(const Matrix& points, const std::vector<int>& labels) {
  const auto s = silhouette_scores(points, labels);
  double sum = 0.0;
  for (double x : s) sum += x;
  return sum / static_cast<double>(s.size());
}

struct SelectKResult {
  int best_k = 0;
  std::vector<int> ks;
  std::vector<double> scores;
};

/// Mean silhouette for each k in [k_lo, k_hi]; the best k maximizes it, ties
/// going to the smaller k.
inline SelectKResult select_k(const Matrix& points, int k_lo, int k_hi, std::uint64_t seed, int restarts = 5) {
  if (k_lo < 2 || k_hi < k_lo) {
    throw std::invalid_argument("select_k: invalid range " + std::to_string(k_lo) + ":" + std::to_string(k_hi));
  }
  SelectKResult r;
  const int n = k_hi - k_lo + 1;
  r.scores.assign(static_cast<std::size_t>(n), 0.0);
  for (int k = k_lo; k <= k_hi; ++k) r.ks.push_back(k);
  parallel_for(n, [&](int i) {
    const int k = k_lo + i;
    const auto km = kmeans_best(points, k, split_seed(seed, static_cast<std::uint64_t>(k)), restarts);
    r.scores[static_cast<std::size_t>(i)] = silhouette_mean(points, km.labels);
  });
  double best = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    if (r.scores[static_cast<std::size_t>(i)] > best) {
      best = r.scores[static_cast<std::size_t>(i)];
      r.best_k = r.ks[static_cast<std::size_t>(i)];
    }
  }
  return r;
}

/// Stacks the flattened control windows of the samples as rows.
inline Matrix control_matrix(const std::vector<Sample>& samples) {
  if (samples.empty()) return Matrix(0, 0);
  const auto d = samples.front().controls.size();
  Matrix m(static_cast<Eigen::Index>(samples.size()), d);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].controls.size() != d) {
      throw DimensionError("control windows are ragged: sample " + std::to_string(i) + " has " +
                           std::to_string(samples[i].controls.size()) + " values, expected " + std::to_string(d));
    }
    m.row(static_cast<Eigen::Index>(i)) = samples[i].controls.transpose();
  }
  return m;
}

inline std::vector<int> label_by_kmeans(const std::vector<Sample>& samples, int k, std::uint64_t seed,
                                        int restarts = 5) {
  return kmeans_best(control_matrix(samples), k, seed, restarts).labels;
}

}  // namespace ncprobe
