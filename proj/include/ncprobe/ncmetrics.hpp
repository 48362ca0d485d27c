#pragma once

// Neural-collapse metrics over labeled feature sets.
//
//   mu_c      class mean, mu global mean over all samples (class-size weighted)
//   sigma_c^2 = 1/(M_c - 1) sum_i |f_i - mu_c|^2
//   CDNV(c,c') = (sigma_c^2 + sigma_c'^2) / (2 |mu_c - mu_c'|^2)
//   std_norm  = STD(|mu_c - mu|) / MEAN(|mu_c - mu|)
//   std_angle = STD of pairwise cosines between centered class means
//
// STD is the population standard deviation.

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "ncprobe/features.hpp"
#include "ncprobe/linalg.hpp"
#include "ncprobe/tape.hpp"

namespace ncprobe {

/// Two classes whose centered means coincide, so their CDNV is undefined.
class DegeneratePairError : public std::domain_error {
 public:
  DegeneratePairError(int a, int b)
      : std::domain_error("degenerate class pair (" + std::to_string(a) + ", " + std::to_string(b) +
                          "): class means coincide"),
        first(a),
        second(b) {}
  int first;
  int second;
};

/// A centered class mean of zero length, which has no direction.
class ZeroMeanError : public std::domain_error {
 public:
  explicit ZeroMeanError(int c)
      : std::domain_error("class " + std::to_string(c) + " mean coincides with the global mean"), cls(c) {}
  int cls;
};

struct ClassMeans {
  Matrix means;   // C x D, row c = mu_c
  Vector global;  // mu
  std::vector<int> counts;

  Matrix centered() const { return means.rowwise() - global.transpose(); }
};

inline ClassMeans class_means(const FeatureSet& fs) {
  fs.validate();
  ClassMeans cm;
  cm.counts = fs.class_counts();
  for (int c = 0; c < fs.num_classes; ++c) {
    if (cm.counts[static_cast<std::size_t>(c)] == 0) {
      throw std::invalid_argument("class_means: class " + std::to_string(c) + " has no samples");
    }
  }
  cm.means = Matrix::Zero(fs.num_classes, fs.dim());
  for (Eigen::Index i = 0; i < fs.size(); ++i) cm.means.row(fs.labels[static_cast<std::size_t>(i)]) += fs.features.row(i);
  cm.global = fs.features.colwise().sum().transpose() / static_cast<double>(fs.size());
  for (int c = 0; c < fs.num_classes; ++c) cm.means.row(c) /= cm.counts[static_cast<std::size_t>(c)];
  return cm;
}

/// Within-class variances sigma_c^2 (divisor M_c - 1).
inline Vector class_variances(const FeatureSet& fs, const ClassMeans& cm) {
  Vector var = Vector::Zero(fs.num_classes);
  for (Eigen::Index i = 0; i < fs.size(); ++i) {
    const int c = fs.labels[static_cast<std::size_t>(i)];
    var(c) += (fs.features.row(i) - cm.means.row(c)).squaredNorm();
  }
  for (int c = 0; c < fs.num_classes; ++c) {
    const int m = cm.counts[static_cast<std::size_t>(c)];
    if (m < 2) throw std::invalid_argument("class " + std::to_string(c) + " needs >= 2 samples for its variance");
    var(c) /= (m - 1);
  }
  return var;
}

struct CdnvResult {
  double mean = 0.0;
  Matrix pairs;  // symmetric, NaN on the diagonal
};

inline double population_std(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

inline CdnvResult cdnv(const FeatureSet& fs) {
  if (fs.num_classes < 2) throw std::invalid_argument("cdnv: need at least 2 classes");
  const ClassMeans cm = class_means(fs);
  const Vector var = class_variances(fs, cm);
  const int c = fs.num_classes;
  CdnvResult r;
  r.pairs = Matrix::Constant(c, c, std::numeric_limits<double>::quiet_NaN());
  double sum = 0.0;
  for (int a = 0; a < c; ++a) {
    for (int b = a + 1; b < c; ++b) {
      const double d2 = (cm.means.row(a) - cm.means.row(b)).squaredNorm();
      if (d2 == 0.0) throw DegeneratePairError(a, b);
      const double v = (var(a) + var(b)) / (2.0 * d2);
      r.pairs(a, b) = r.pairs(b, a) = v;
      sum += v;
    }
  }
  r.mean = sum / (c * (c - 1) / 2);
  return r;
}

inline std::vector<double> centered_norms(const ClassMeans& cm) {
  const Matrix m = cm.centered();
  std::vector<double> n;
  for (Eigen::Index c = 0; c < m.rows(); ++c) n.push_back(m.row(c).norm());
  return n;
}

inline double std_norm(const FeatureSet& fs) {
  if (fs.num_classes < 2) throw std::invalid_argument("std_norm: need at least 2 classes");
  const auto n = centered_norms(class_means(fs));
  double mean = 0.0;
  for (double x : n) mean += x;
  mean /= static_cast<double>(n.size());
  if (mean == 0.0) throw ZeroMeanError(0);
  return population_std(n) / mean;
}

/// Pairwise cosines of centered class means, C x C with ones on the diagonal.
inline Matrix mean_cosines(const ClassMeans& cm) {
  const Matrix m = cm.centered();
  const auto c = m.rows();
  Matrix unit(c, m.cols());
  for (Eigen::Index i = 0; i < c; ++i) {
    const double n = m.row(i).norm();
    if (n == 0.0) throw ZeroMeanError(static_cast<int>(i));
    unit.row(i) = m.row(i) / n;
  }
  return unit * unit.transpose();
}

inline std::vector<double> upper_pairs(const Matrix& m) {
  std::vector<double> v;
  for (Eigen::Index a = 0; a < m.rows(); ++a)
    for (Eigen::Index b = a + 1; b < m.cols(); ++b) v.push_back(m(a, b));
  return v;
}

inline double std_angle(const FeatureSet& fs) {
  if (fs.num_classes < 2) throw std::invalid_argument("std_angle: need at least 2 classes");
  return population_std(upper_pairs(mean_cosines(class_means(fs))));
}

struct NCReport {
  double cdnv_mean = 0.0;
  Matrix cdnv_pairs;
  double std_norm = 0.0;
  double std_angle = 0.0;
  std::vector<double> class_norms;
  Matrix cosines;
  std::vector<int> counts;
  int num_classes = 0;
  Eigen::Index dim = 0;
};

inline NCReport nc_report(const FeatureSet& fs) {
  NCReport r;
  const CdnvResult cd = cdnv(fs);
  const ClassMeans cm = class_means(fs);
  r.cdnv_mean = cd.mean;
  r.cdnv_pairs = cd.pairs;
  r.class_norms = centered_norms(cm);
  double mean = 0.0;
  for (double x : r.class_norms) mean += x;
  mean /= static_cast<double>(r.class_norms.size());
  r.cosines = mean_cosines(cm);
  r.std_norm = population_std(r.class_norms) / mean;
  r.std_angle = population_std(upper_pairs(r.cosines));
  r.counts = cm.counts;
  r.num_classes = fs.num_classes;
  r.dim = fs.dim();
  return r;
}

struct NCWeights {
  double cdnv = 1.0;
  double std_norm = 1.0;
  double std_angle = 1.0;
};

struct NCLossNodes {
  NodeId total;
  NodeId cdnv;
  NodeId std_norm;
  NodeId std_angle;
  int classes_used = 0;
};

inline constexpr double kNCEpsilon = 1e-8;

/// Differentiable NC objective over a batch of features (rows of `features`).
///
/// Classes with fewer than two samples in the batch are left out entirely.
/// Guards: pairwise squared distances get +eps; squared centered-mean norms get
/// +eps times their average, and each spread term is sqrt(r + eps) - sqrt(eps)
/// of a scale-free variance ratio r. Both spread terms are therefore exactly
/// scale invariant and vanish, with zero gradient, at a simplex ETF.
inline NCLossNodes nc_loss(Tape& tape, NodeId features, const std::vector<int>& labels, const NCWeights& w) {
  const Matrix& f = tape.value(features);
  if (static_cast<Eigen::Index>(labels.size()) != f.rows()) {
    throw DimensionError("nc_loss: " + std::to_string(labels.size()) + " labels for " + std::to_string(f.rows()) +
                         " feature rows");
  }
  int max_label = -1;
  for (int l : labels) {
    if (l < 0) throw std::out_of_range("nc_loss: negative label");
    max_label = std::max(max_label, l);
  }
  std::vector<std::vector<int>> rows(static_cast<std::size_t>(max_label + 1));
  for (std::size_t i = 0; i < labels.size(); ++i) rows[static_cast<std::size_t>(labels[i])].push_back(static_cast<int>(i));
  std::vector<std::vector<int>> used;
  std::vector<int> all_rows;
  for (auto& r : rows) {
    if (r.size() >= 2) {
      all_rows.insert(all_rows.end(), r.begin(), r.end());
      used.push_back(std::move(r));
    }
  }
  const int c = static_cast<int>(used.size());
  if (c < 2) throw std::invalid_argument("nc_loss: need at least 2 classes with >= 2 samples in the batch");

  const NodeId global = tape.mean_rows(tape.select_rows(features, all_rows));
  std::vector<NodeId> centered;
  std::vector<NodeId> var;
  for (const auto& r : used) {
    const NodeId fc = tape.select_rows(features, r);
    const NodeId mu = tape.mean_rows(fc);
    centered.push_back(tape.sub(mu, global));
    const NodeId ss = tape.squared_norm(tape.sub_row(fc, mu));
    var.push_back(tape.scale(ss, 1.0 / static_cast<double>(r.size() - 1)));
  }

  const double pairs = c * (c - 1) / 2.0;
  NodeId cd_sum = tape.scalar(0.0);
  for (int a = 0; a < c; ++a) {
    for (int b = a + 1; b < c; ++b) {
      const NodeId d2 = tape.add_const(tape.squared_norm(tape.sub(centered[a], centered[b])), kNCEpsilon);
      cd_sum = tape.add(cd_sum, tape.div(tape.add(var[a], var[b]), tape.scale(d2, 2.0)));
    }
  }
  const NodeId cd = tape.scale(cd_sum, 1.0 / pairs);

  std::vector<NodeId> sq;
  NodeId sq_sum = tape.scalar(0.0);
  for (const NodeId m : centered) {
    sq.push_back(tape.squared_norm(m));
    sq_sum = tape.add(sq_sum, sq.back());
  }
  const NodeId guard = tape.add_const(tape.scale(sq_sum, kNCEpsilon / c), kNCEpsilon * kNCEpsilon);
  std::vector<NodeId> norms;
  NodeId norm_sum = tape.scalar(0.0);
  for (const NodeId s : sq) {
    norms.push_back(tape.sqrt(tape.add(s, guard)));
    norm_sum = tape.add(norm_sum, norms.back());
  }
  const NodeId norm_mean = tape.scale(norm_sum, 1.0 / c);
  NodeId norm_ss = tape.scalar(0.0);
  for (const NodeId n : norms) {
    const NodeId d = tape.sub(n, norm_mean);
    norm_ss = tape.add(norm_ss, tape.mul(d, d));
  }
  const NodeId norm_ratio = tape.div(tape.scale(norm_ss, 1.0 / c), tape.mul(norm_mean, norm_mean));
  const NodeId sn = tape.add_const(tape.sqrt(tape.add_const(norm_ratio, kNCEpsilon)), -std::sqrt(kNCEpsilon));

  std::vector<NodeId> cosines;
  NodeId cos_sum = tape.scalar(0.0);
  for (int a = 0; a < c; ++a) {
    for (int b = a + 1; b < c; ++b) {
      const NodeId dot = tape.sum(tape.mul(centered[a], centered[b]));
      cosines.push_back(tape.div(dot, tape.mul(norms[a], norms[b])));
      cos_sum = tape.add(cos_sum, cosines.back());
    }
  }
  const NodeId cos_mean = tape.scale(cos_sum, 1.0 / pairs);
  NodeId cos_ss = tape.scalar(0.0);
  for (const NodeId x : cosines) {
    const NodeId d = tape.sub(x, cos_mean);
    cos_ss = tape.add(cos_ss, tape.mul(d, d));
  }
  const NodeId sa =
      tape.add_const(tape.sqrt(tape.add_const(tape.scale(cos_ss, 1.0 / pairs), kNCEpsilon)), -std::sqrt(kNCEpsilon));

  NodeId total = tape.scale(cd, w.cdnv);
  total = tape.add(total, tape.scale(sn, w.std_norm));
  total = tape.add(total, tape.scale(sa, w.std_angle));
  return {total, cd, sn, sa, c};
}

}  // namespace ncprobe
