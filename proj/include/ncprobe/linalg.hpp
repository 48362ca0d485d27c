#pragma once

// Dense vectors and matrices. Storage and kernels come from Eigen; this
// header adds the shape checks the rest of the library relies on, since
// Eigen only asserts shapes in debug builds.

#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace ncprobe {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* where) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(where) + ": shape mismatch " + shape_str(a) + " vs " +
                         shape_str(b));
  }
}

inline void require_size(const Vector& v, Eigen::Index n, const char* where) {
  if (v.size() != n) {
    throw DimensionError(std::string(where) + ": expected length " + std::to_string(n) +
                         ", got " + std::to_string(v.size()));
  }
}

/// -log softmax(logits)[label], evaluated with the max subtracted.
inline double softmax_cross_entropy(const Vector& logits, int label) {
  if (label < 0 || label >= logits.size()) {
    throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(label) +
                            " outside [0, " + std::to_string(logits.size()) + ")");
  }
  const double zmax = logits.maxCoeff();
  const double lse = zmax + std::log((logits.array() - zmax).exp().sum());
  return lse - logits[label];
}

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
inline Vector finite_difference_gradient(const std::function<double(const Vector&)>& f,
                                         const Vector& x, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_difference_gradient: step must be > 0");
  Vector g(x.size());
  Vector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    probe[i] = xi + step;
    const double fp = f(probe);
    probe[i] = xi - step;
    const double fm = f(probe);
    probe[i] = xi;
    g[i] = (fp - fm) / (2.0 * step);
  }
  return g;
}

}  // namespace ncprobe
