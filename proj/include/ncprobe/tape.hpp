#pragma once

// Reverse-mode differentiation over matrix-valued nodes.
//
// A Tape records primitive operations in execution order, so the record is
// already topologically sorted. backward() walks it once in reverse.
// Scalars are 1x1 matrices. Batched activations are stored one sample per row.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "ncprobe/linalg.hpp"

namespace ncprobe {

struct NodeId {
  std::size_t index = 0;
  friend bool operator==(NodeId, NodeId) = default;
};

enum class Op : std::uint8_t {
  kLeaf,
  kAffine,        // x (B x in), w (out x in), b (1 x out) -> x w^T + b
  kRelu,
  kTanh,
  kAdd,
  kSub,
  kMul,           // elementwise
  kDiv,           // elementwise
  kScale,         // c * x
  kAddConst,      // x + c
  kSqrt,
  kSum,           // -> 1x1
  kMean,          // -> 1x1
  kSquaredNorm,   // -> 1x1
  kSelectRows,
  kMeanRows,      // -> 1 x cols
  kSubRow,        // x - ones * r
  kSoftmaxXent,   // mean over rows of -log softmax(z_i)[label_i] -> 1x1
};

class Tape {
 public:
  NodeId leaf(Matrix value, bool requires_grad = true) {
    Node n;
    n.op = Op::kLeaf;
    n.requires_grad = requires_grad;
    n.value = std::move(value);
    return push(std::move(n));
  }

  NodeId constant(Matrix value) { return leaf(std::move(value), false); }

  NodeId scalar(double v, bool requires_grad = false) {
    return leaf(Matrix::Constant(1, 1, v), requires_grad);
  }

  NodeId affine(NodeId x, NodeId w, NodeId b) {
    const Matrix& xv = value(x);
    const Matrix& wv = value(w);
    const Matrix& bv = value(b);
    if (xv.cols() != wv.cols() || bv.rows() != 1 || bv.cols() != wv.rows()) {
      throw DimensionError("affine: x " + shape_str(xv) + ", w " + shape_str(wv) + ", b " +
                           shape_str(bv));
    }
    return record(Op::kAffine, {x, w, b});
  }

  NodeId relu(NodeId x) { return record(Op::kRelu, {x}); }
  NodeId tanh(NodeId x) { return record(Op::kTanh, {x}); }

  NodeId add(NodeId a, NodeId b) { return binary(Op::kAdd, a, b, "add"); }
  NodeId sub(NodeId a, NodeId b) { return binary(Op::kSub, a, b, "sub"); }
  NodeId mul(NodeId a, NodeId b) { return binary(Op::kMul, a, b, "mul"); }
  NodeId div(NodeId a, NodeId b) { return binary(Op::kDiv, a, b, "div"); }

  NodeId scale(NodeId x, double c) { return record(Op::kScale, {x}, c); }
  NodeId add_const(NodeId x, double c) { return record(Op::kAddConst, {x}, c); }
  NodeId sqrt(NodeId x) { return record(Op::kSqrt, {x}); }

  NodeId sum(NodeId x) { return record(Op::kSum, {x}); }
  NodeId mean(NodeId x) { return record(Op::kMean, {x}); }
  NodeId squared_norm(NodeId x) { return record(Op::kSquaredNorm, {x}); }

  NodeId select_rows(NodeId x, std::vector<int> rows) {
    const auto n = value(x).rows();
    for (int r : rows) {
      if (r < 0 || r >= n) throw std::out_of_range("select_rows: row index out of range");
    }
    return record(Op::kSelectRows, {x}, 0.0, std::make_shared<const std::vector<int>>(std::move(rows)));
  }

  NodeId mean_rows(NodeId x) {
    if (value(x).rows() == 0) throw DimensionError("mean_rows: empty input");
    return record(Op::kMeanRows, {x});
  }

  NodeId sub_row(NodeId x, NodeId row) {
    const Matrix& r = value(row);
    if (r.rows() != 1 || r.cols() != value(x).cols()) {
      throw DimensionError("sub_row: x " + shape_str(value(x)) + ", row " + shape_str(r));
    }
    return record(Op::kSubRow, {x, row});
  }

  NodeId softmax_cross_entropy(NodeId logits, std::vector<int> labels) {
    const Matrix& z = value(logits);
    if (static_cast<Eigen::Index>(labels.size()) != z.rows() || z.rows() == 0) {
      throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                           " labels for logits " + shape_str(z));
    }
    for (int l : labels) {
      if (l < 0 || l >= z.cols()) throw std::out_of_range("softmax_cross_entropy: label out of range");
    }
    return record(Op::kSoftmaxXent, {logits}, 0.0,
                  std::make_shared<const std::vector<int>>(std::move(labels)));
  }

  const Matrix& value(NodeId id) const { return at(id).value; }
  double scalar_value(NodeId id) const {
    const Matrix& v = value(id);
    if (v.size() != 1) throw DimensionError("scalar_value: node is " + shape_str(v));
    return v(0, 0);
  }

  /// Adjoint of a node after backward(). Zero-sized for nodes that do not
  /// require gradients.
  const Matrix& grad(NodeId id) const { return at(id).grad; }

  bool requires_grad(NodeId id) const { return at(id).requires_grad; }

  /// Overwrites a leaf value; call replay() afterwards to refresh dependents.
  void set_leaf(NodeId id, Matrix v) {
    Node& n = nodes_.at(id.index);
    if (n.op != Op::kLeaf) throw std::invalid_argument("set_leaf: node is not a leaf");
    require_same_shape(n.value, v, "set_leaf");
    n.value = std::move(v);
  }

  /// Recomputes every non-leaf value in recorded order.
  void replay() {
    for (auto& n : nodes_) {
      if (n.op != Op::kLeaf) n.value = compute(n);
    }
  }

  void backward(NodeId output) {
    const Node& out = at(output);
    if (out.value.size() != 1) {
      throw DimensionError("backward: output must be scalar, got " + shape_str(out.value));
    }
    for (std::size_t i = 0; i <= output.index; ++i) {
      Node& n = nodes_[i];
      if (n.requires_grad) {
        n.grad.setZero(n.value.rows(), n.value.cols());
      } else {
        n.grad.resize(0, 0);
      }
    }
    for (std::size_t i = output.index + 1; i < nodes_.size(); ++i) nodes_[i].grad.resize(0, 0);
    if (!out.requires_grad) return;
    nodes_[output.index].grad(0, 0) = 1.0;
    visits_ = 0;
    for (std::size_t i = output.index + 1; i-- > 0;) {
      ++visits_;
      propagate(nodes_[i]);
    }
  }

  std::size_t size() const { return nodes_.size(); }
  std::size_t last_backward_visits() const { return visits_; }

 private:
  struct Node {
    Op op = Op::kLeaf;
    bool requires_grad = false;
    std::size_t in[3] = {0, 0, 0};
    int n_in = 0;
    double c = 0.0;
    std::shared_ptr<const std::vector<int>> idx;
    Matrix value;
    Matrix grad;
  };

  const Node& at(NodeId id) const {
    if (id.index >= nodes_.size()) throw std::out_of_range("Tape: unknown node");
    return nodes_[id.index];
  }

  NodeId push(Node n) {
    nodes_.push_back(std::move(n));
    return NodeId{nodes_.size() - 1};
  }

  NodeId binary(Op op, NodeId a, NodeId b, const char* where) {
    require_same_shape(value(a), value(b), where);
    return record(op, {a, b});
  }

  NodeId record(Op op, std::initializer_list<NodeId> inputs, double c = 0.0,
                std::shared_ptr<const std::vector<int>> idx = nullptr) {
    Node n;
    n.op = op;
    n.c = c;
    n.idx = std::move(idx);
    for (NodeId id : inputs) {
      at(id);
      n.in[n.n_in++] = id.index;
      n.requires_grad = n.requires_grad || nodes_[id.index].requires_grad;
    }
    n.value = compute(n);
    return push(std::move(n));
  }

  const Matrix& in(const Node& n, int k) const { return nodes_[n.in[k]].value; }

  Matrix compute(const Node& n) const {
    switch (n.op) {
      case Op::kLeaf:
        return n.value;
      case Op::kAffine: {
        Matrix y = in(n, 0) * in(n, 1).transpose();
        y.rowwise() += in(n, 2).row(0);
        return y;
      }
      case Op::kRelu:
        return in(n, 0).cwiseMax(0.0);
      case Op::kTanh:
        return in(n, 0).array().tanh().matrix();
      case Op::kAdd:
        return in(n, 0) + in(n, 1);
      case Op::kSub:
        return in(n, 0) - in(n, 1);
      case Op::kMul:
        return in(n, 0).cwiseProduct(in(n, 1));
      case Op::kDiv:
        return in(n, 0).cwiseQuotient(in(n, 1));
      case Op::kScale:
        return n.c * in(n, 0);
      case Op::kAddConst:
        return (in(n, 0).array() + n.c).matrix();
      case Op::kSqrt:
        return in(n, 0).cwiseSqrt();
      case Op::kSum:
        return Matrix::Constant(1, 1, in(n, 0).sum());
      case Op::kMean:
        return Matrix::Constant(1, 1, in(n, 0).mean());
      case Op::kSquaredNorm:
        return Matrix::Constant(1, 1, in(n, 0).squaredNorm());
      case Op::kSelectRows: {
        const Matrix& x = in(n, 0);
        Matrix y(static_cast<Eigen::Index>(n.idx->size()), x.cols());
        for (std::size_t k = 0; k < n.idx->size(); ++k) y.row(static_cast<Eigen::Index>(k)) = x.row((*n.idx)[k]);
        return y;
      }
      case Op::kMeanRows:
        return in(n, 0).colwise().mean();
      case Op::kSubRow: {
        Matrix y = in(n, 0);
        y.rowwise() -= in(n, 1).row(0);
        return y;
      }
      case Op::kSoftmaxXent: {
        const Matrix& z = in(n, 0);
        double total = 0.0;
        for (Eigen::Index i = 0; i < z.rows(); ++i) {
          const double zmax = z.row(i).maxCoeff();
          const double lse = zmax + std::log((z.row(i).array() - zmax).exp().sum());
          total += lse - z(i, (*n.idx)[static_cast<std::size_t>(i)]);
        }
        return Matrix::Constant(1, 1, total / static_cast<double>(z.rows()));
      }
    }
    throw std::logic_error("Tape: unknown op");
  }

  Matrix& grad_of(const Node& n, int k) { return nodes_[n.in[k]].grad; }
  bool wants(const Node& n, int k) const { return nodes_[n.in[k]].requires_grad; }

  void propagate(const Node& n) {
    if (n.op == Op::kLeaf || !n.requires_grad) return;
    const Matrix& g = n.grad;
    switch (n.op) {
      case Op::kLeaf:
        return;
      case Op::kAffine:
        if (wants(n, 0)) grad_of(n, 0).noalias() += g * in(n, 1);
        if (wants(n, 1)) grad_of(n, 1).noalias() += g.transpose() * in(n, 0);
        if (wants(n, 2)) grad_of(n, 2) += g.colwise().sum();
        return;
      case Op::kRelu:
        if (wants(n, 0)) {
          grad_of(n, 0).array() += (n.value.array() > 0.0).select(g.array(), 0.0);
        }
        return;
      case Op::kTanh:
        if (wants(n, 0)) grad_of(n, 0).array() += g.array() * (1.0 - n.value.array().square());
        return;
      case Op::kAdd:
        if (wants(n, 0)) grad_of(n, 0) += g;
        if (wants(n, 1)) grad_of(n, 1) += g;
        return;
      case Op::kSub:
        if (wants(n, 0)) grad_of(n, 0) += g;
        if (wants(n, 1)) grad_of(n, 1) -= g;
        return;
      case Op::kMul:
        if (wants(n, 0)) grad_of(n, 0) += g.cwiseProduct(in(n, 1));
        if (wants(n, 1)) grad_of(n, 1) += g.cwiseProduct(in(n, 0));
        return;
      case Op::kDiv:
        if (wants(n, 0)) grad_of(n, 0).array() += g.array() / in(n, 1).array();
        if (wants(n, 1)) {
          grad_of(n, 1).array() -= g.array() * n.value.array() / in(n, 1).array();
        }
        return;
      case Op::kScale:
        if (wants(n, 0)) grad_of(n, 0) += n.c * g;
        return;
      case Op::kAddConst:
        if (wants(n, 0)) grad_of(n, 0) += g;
        return;
      case Op::kSqrt:
        if (wants(n, 0)) grad_of(n, 0).array() += 0.5 * g.array() / n.value.array();
        return;
      case Op::kSum:
        if (wants(n, 0)) grad_of(n, 0).array() += g(0, 0);
        return;
      case Op::kMean:
        if (wants(n, 0)) grad_of(n, 0).array() += g(0, 0) / static_cast<double>(in(n, 0).size());
        return;
      case Op::kSquaredNorm:
        if (wants(n, 0)) grad_of(n, 0) += 2.0 * g(0, 0) * in(n, 0);
        return;
      case Op::kSelectRows:
        if (wants(n, 0)) {
          Matrix& gx = grad_of(n, 0);
          for (std::size_t k = 0; k < n.idx->size(); ++k) gx.row((*n.idx)[k]) += g.row(static_cast<Eigen::Index>(k));
        }
        return;
      case Op::kMeanRows:
        if (wants(n, 0)) {
          Matrix& gx = grad_of(n, 0);
          gx.rowwise() += g.row(0) / static_cast<double>(gx.rows());
        }
        return;
      case Op::kSubRow:
        if (wants(n, 0)) grad_of(n, 0) += g;
        if (wants(n, 1)) grad_of(n, 1) -= g.colwise().sum();
        return;
      case Op::kSoftmaxXent:
        if (wants(n, 0)) {
          const Matrix& z = in(n, 0);
          Matrix& gz = grad_of(n, 0);
          const double s = g(0, 0) / static_cast<double>(z.rows());
          for (Eigen::Index i = 0; i < z.rows(); ++i) {
            const double zmax = z.row(i).maxCoeff();
            RowVector p = (z.row(i).array() - zmax).exp().matrix();
            p /= p.sum();
            p((*n.idx)[static_cast<std::size_t>(i)]) -= 1.0;
            gz.row(i) += s * p;
          }
        }
        return;
    }
  }

  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
};

}  // namespace ncprobe
