#pragma once

// Feedforward networks trained through the Tape.
//
// Layer l computes act_l(x W_l^T + b_l) with W_l of shape (out x in).
// The "feature" of a network is the post-activation output of its
// second-to-last layer; the last layer's output is the logits/prediction.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ncprobe/features.hpp"
#include "ncprobe/linalg.hpp"
#include "ncprobe/rng.hpp"
#include "ncprobe/tape.hpp"

namespace ncprobe {

enum class Activation : std::uint8_t { kRelu, kTanh, kIdentity };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
    case Activation::kIdentity: return "identity";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "tanh") return Activation::kTanh;
  if (s == "identity") return Activation::kIdentity;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

struct Layer {
  Matrix weight;  // out x in
  Matrix bias;    // 1 x out
  Activation activation = Activation::kIdentity;
};

struct Network {
  std::vector<Layer> layers;

  int input_size() const { return static_cast<int>(layers.front().weight.cols()); }
  int output_size() const { return static_cast<int>(layers.back().weight.rows()); }
  int feature_size() const {
    return layers.size() < 2 ? input_size() : static_cast<int>(layers[layers.size() - 2].weight.rows());
  }

  std::vector<int> layer_sizes() const {
    std::vector<int> sizes{input_size()};
    for (const auto& l : layers) sizes.push_back(static_cast<int>(l.weight.rows()));
    return sizes;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  friend bool operator==(const Network& a, const Network& b) {
    if (a.layers.size() != b.layers.size()) return false;
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
      const auto& x = a.layers[i];
      const auto& y = b.layers[i];
      if (x.activation != y.activation || x.weight.rows() != y.weight.rows() ||
          x.weight.cols() != y.weight.cols() || x.weight != y.weight || x.bias != y.bias) {
        return false;
      }
    }
    return true;
  }
};

/// Weights ~ N(0, gain^2 / fan_in) with gain^2 = 2 for rectifier layers and
/// 1 otherwise; biases zero. `hidden` applies to every layer but the last,
/// which uses `output`.
inline Network init_network(const std::vector<int>& layer_sizes, Activation hidden, std::uint64_t seed,
                            Activation output = Activation::kIdentity) {
  if (layer_sizes.size() < 2) throw std::invalid_argument("init_network: need at least 2 layer sizes");
  for (int s : layer_sizes) {
    if (s < 1) throw std::invalid_argument("init_network: layer sizes must be positive");
  }
  RngStream rng(seed);
  Network net;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    const int fan_in = layer_sizes[l];
    const int fan_out = layer_sizes[l + 1];
    Layer layer;
    layer.activation = (l + 2 == layer_sizes.size()) ? output : hidden;
    const double gain2 = layer.activation == Activation::kRelu ? 2.0 : 1.0;
    const double scale = std::sqrt(gain2 / fan_in);
    layer.weight.resize(fan_out, fan_in);
    for (int r = 0; r < fan_out; ++r) {
      for (int c = 0; c < fan_in; ++c) layer.weight(r, c) = scale * rng.normal();
    }
    layer.bias = Matrix::Zero(1, fan_out);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

inline void apply_activation(Matrix& m, Activation a) {
  switch (a) {
    case Activation::kRelu: m = m.cwiseMax(0.0); break;
    case Activation::kTanh: m = m.array().tanh().matrix(); break;
    case Activation::kIdentity: break;
  }
}

/// Batched forward pass, one input per row. Fills `feature` (if non-null)
/// with the second-to-last layer's activations.
inline Matrix forward_batch(const Network& net, const Matrix& inputs, Matrix* feature = nullptr) {
  if (inputs.cols() != net.input_size()) {
    throw DimensionError("forward: input width " + std::to_string(inputs.cols()) + ", network expects " +
                         std::to_string(net.input_size()));
  }
  Matrix h = inputs;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    if (feature && l + 1 == net.layers.size()) *feature = h;
    const Layer& layer = net.layers[l];
    Matrix z = h * layer.weight.transpose();
    z.rowwise() += layer.bias.row(0);
    apply_activation(z, layer.activation);
    h = std::move(z);
  }
  if (feature && net.layers.size() == 1) *feature = inputs;
  return h;
}

struct ForwardResult {
  Vector logits;
  Vector feature;
};

inline ForwardResult forward(const Network& net, const Vector& x) {
  require_size(x, net.input_size(), "forward");
  Matrix feature;
  Matrix out = forward_batch(net, x.transpose(), &feature);
  return {out.row(0).transpose(), feature.row(0).transpose()};
}

/// Parameter leaves of a network on a tape.
struct BoundNetwork {
  std::vector<NodeId> weights;
  std::vector<NodeId> biases;
};

inline BoundNetwork bind(Tape& tape, const Network& net, bool trainable = true) {
  BoundNetwork b;
  for (const auto& layer : net.layers) {
    b.weights.push_back(tape.leaf(layer.weight, trainable));
    b.biases.push_back(tape.leaf(layer.bias, trainable));
  }
  return b;
}

inline NodeId apply_activation(Tape& tape, NodeId x, Activation a) {
  switch (a) {
    case Activation::kRelu: return tape.relu(x);
    case Activation::kTanh: return tape.tanh(x);
    case Activation::kIdentity: return x;
  }
  return x;
}

/// Records the network on the tape. `feature`, if non-null, receives the
/// second-to-last layer's node.
inline NodeId apply(Tape& tape, const Network& net, const BoundNetwork& bound, NodeId x,
                    NodeId* feature = nullptr) {
  NodeId h = x;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    if (feature && l + 1 == net.layers.size()) *feature = h;
    h = tape.affine(h, bound.weights[l], bound.biases[l]);
    h = apply_activation(tape, h, net.layers[l].activation);
  }
  if (feature && net.layers.size() == 1) *feature = x;
  return h;
}

/// Per-layer gradients, shaped like the network's parameters.
struct NetworkGrads {
  std::vector<Matrix> weights;
  std::vector<Matrix> biases;
};

inline NetworkGrads gradients(const Tape& tape, const BoundNetwork& bound) {
  NetworkGrads g;
  for (std::size_t l = 0; l < bound.weights.size(); ++l) {
    g.weights.push_back(tape.grad(bound.weights[l]));
    g.biases.push_back(tape.grad(bound.biases[l]));
  }
  return g;
}

/// Flattened parameter vector in layer order (weights column-major, then bias).
inline Vector flatten(const Network& net) {
  Vector v(static_cast<Eigen::Index>(net.parameter_count()));
  Eigen::Index k = 0;
  for (const auto& l : net.layers) {
    v.segment(k, l.weight.size()) = l.weight.reshaped();
    k += l.weight.size();
    v.segment(k, l.bias.size()) = l.bias.reshaped();
    k += l.bias.size();
  }
  return v;
}

inline void unflatten(Network& net, const Vector& v) {
  require_size(v, static_cast<Eigen::Index>(net.parameter_count()), "unflatten");
  Eigen::Index k = 0;
  for (auto& l : net.layers) {
    l.weight.reshaped() = v.segment(k, l.weight.size());
    k += l.weight.size();
    l.bias.reshaped() = v.segment(k, l.bias.size());
    k += l.bias.size();
  }
}

inline Vector flatten(const NetworkGrads& g) {
  Eigen::Index n = 0;
  for (std::size_t l = 0; l < g.weights.size(); ++l) n += g.weights[l].size() + g.biases[l].size();
  Vector v(n);
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < g.weights.size(); ++l) {
    v.segment(k, g.weights[l].size()) = g.weights[l].reshaped();
    k += g.weights[l].size();
    v.segment(k, g.biases[l].size()) = g.biases[l].reshaped();
    k += g.biases[l].size();
  }
  return v;
}

enum class OptimizerKind : std::uint8_t { kAdam, kSgd };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW-style), applied to weights only
};

class Optimizer {
 public:
  Optimizer(const Network& net, OptimizerConfig cfg) : cfg_(cfg) {
    for (const auto& l : net.layers) {
      m_w_.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
      v_w_.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
      m_b_.push_back(Matrix::Zero(1, l.bias.cols()));
      v_b_.push_back(Matrix::Zero(1, l.bias.cols()));
    }
  }

  void step(Network& net, const NetworkGrads& g) {
    if (g.weights.size() != net.layers.size()) throw DimensionError("Optimizer::step: layer count mismatch");
    ++t_;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      if (cfg_.weight_decay != 0.0) net.layers[l].weight *= 1.0 - cfg_.lr * cfg_.weight_decay;
      update(net.layers[l].weight, g.weights[l], m_w_[l], v_w_[l]);
      update(net.layers[l].bias, g.biases[l], m_b_[l], v_b_[l]);
    }
  }

  long steps() const { return t_; }

 private:
  void update(Matrix& p, const Matrix& g, Matrix& m, Matrix& v) const {
    require_same_shape(p, g, "Optimizer::step");
    if (cfg_.kind == OptimizerKind::kSgd) {
      p -= cfg_.lr * g;
      return;
    }
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseAbs2();
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    p.array() -= cfg_.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg_.eps);
  }

  OptimizerConfig cfg_;
  std::vector<Matrix> m_w_, v_w_, m_b_, v_b_;
  long t_ = 0;
};

struct TrainConfig {
  int epochs = 1000;
  int batch_size = 256;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double loss = 0.0;
  std::optional<double> class_error;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
};

/// Called after every epoch with the 1-based epoch number. Receives the
/// network by const reference and no RNG, so it cannot perturb training.
using EpochCallback = std::function<void(int, const Network&)>;

struct LabeledSet {
  Matrix inputs;  // one sample per row
  std::vector<int> labels;
  int num_classes = 0;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline Matrix gather_rows(const Matrix& m, const std::vector<int>& order, std::size_t begin, std::size_t end) {
  Matrix out(static_cast<Eigen::Index>(end - begin), m.cols());
  for (std::size_t k = begin; k < end; ++k) out.row(static_cast<Eigen::Index>(k - begin)) = m.row(order[k]);
  return out;
}

inline void check_finite(double loss, int epoch, std::size_t batch) {
  if (!std::isfinite(loss)) {
    throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch));
  }
}

}  // namespace detail

inline std::pair<Network, TrainHistory> train_classifier(const LabeledSet& data, Network net, const TrainConfig& cfg,
                                                         const EpochCallback& on_epoch = {}) {
  const auto m = static_cast<std::size_t>(data.inputs.rows());
  if (m == 0) throw std::invalid_argument("train_classifier: empty dataset");
  if (data.labels.size() != m) throw DimensionError("train_classifier: labels/inputs length mismatch");
  if (data.inputs.cols() != net.input_size()) throw DimensionError("train_classifier: input width mismatch");
  for (int l : data.labels) {
    if (l < 0 || l >= net.output_size()) throw std::out_of_range("train_classifier: label out of range");
  }
  if (cfg.batch_size < 1) throw std::invalid_argument("train_classifier: batch_size must be >= 1");

  RngStream rng(cfg.seed);
  Optimizer opt(net, cfg.optimizer);
  std::vector<int> order(m);
  for (std::size_t i = 0; i < m; ++i) order[i] = static_cast<int>(i);
  TrainHistory history;
  const auto bs = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    std::size_t wrong = 0;
    for (std::size_t begin = 0, b = 0; begin < m; begin += bs, ++b) {
      const std::size_t end = std::min(m, begin + bs);
      std::vector<int> labels;
      labels.reserve(end - begin);
      for (std::size_t k = begin; k < end; ++k) labels.push_back(data.labels[static_cast<std::size_t>(order[k])]);

      Tape tape;
      const BoundNetwork bound = bind(tape, net);
      const NodeId x = tape.constant(detail::gather_rows(data.inputs, order, begin, end));
      const NodeId logits = apply(tape, net, bound, x);
      const Matrix& z = tape.value(logits);
      for (Eigen::Index i = 0; i < z.rows(); ++i) {
        Eigen::Index arg;
        z.row(i).maxCoeff(&arg);
        if (arg != labels[static_cast<std::size_t>(i)]) ++wrong;
      }
      const NodeId loss = tape.softmax_cross_entropy(logits, std::move(labels));
      const double lv = tape.scalar_value(loss);
      detail::check_finite(lv, epoch, b);
      loss_sum += lv * static_cast<double>(end - begin);
      tape.backward(loss);
      opt.step(net, gradients(tape, bound));
    }
    history.epochs.push_back({epoch, loss_sum / static_cast<double>(m),
                              static_cast<double>(wrong) / static_cast<double>(m)});
    if (on_epoch) on_epoch(epoch, net);
  }
  return {std::move(net), std::move(history)};
}

/// Mean-squared-error regression: loss = mean over samples and output
/// coordinates of (prediction - target)^2.
inline std::pair<Network, TrainHistory> train_regressor(const Matrix& inputs, const Matrix& targets, Network net,
                                                        const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  const auto m = static_cast<std::size_t>(inputs.rows());
  if (m == 0) throw std::invalid_argument("train_regressor: empty dataset");
  if (targets.rows() != inputs.rows()) throw DimensionError("train_regressor: inputs/targets length mismatch");
  if (inputs.cols() != net.input_size()) throw DimensionError("train_regressor: input width mismatch");
  if (targets.cols() != net.output_size()) throw DimensionError("train_regressor: target width mismatch");
  if (cfg.batch_size < 1) throw std::invalid_argument("train_regressor: batch_size must be >= 1");

  RngStream rng(cfg.seed);
  Optimizer opt(net, cfg.optimizer);
  std::vector<int> order(m);
  for (std::size_t i = 0; i < m; ++i) order[i] = static_cast<int>(i);
  TrainHistory history;
  const auto bs = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    for (std::size_t begin = 0, b = 0; begin < m; begin += bs, ++b) {
      const std::size_t end = std::min(m, begin + bs);
      Tape tape;
      const BoundNetwork bound = bind(tape, net);
      const NodeId x = tape.constant(detail::gather_rows(inputs, order, begin, end));
      const NodeId y = tape.constant(detail::gather_rows(targets, order, begin, end));
      const NodeId pred = apply(tape, net, bound, x);
      const NodeId loss = tape.scale(tape.squared_norm(tape.sub(pred, y)),
                                     1.0 / static_cast<double>((end - begin) * static_cast<std::size_t>(targets.cols())));
      const double lv = tape.scalar_value(loss);
      detail::check_finite(lv, epoch, b);
      loss_sum += lv * static_cast<double>(end - begin);
      tape.backward(loss);
      opt.step(net, gradients(tape, bound));
    }
    history.epochs.push_back({epoch, loss_sum / static_cast<double>(m), std::nullopt});
    if (on_epoch) on_epoch(epoch, net);
  }
  return {std::move(net), std::move(history)};
}

/// Fraction of rows whose argmax logit differs from the label.
inline double classification_error(const Network& net, const LabeledSet& data) {
  const Matrix z = forward_batch(net, data.inputs);
  std::size_t wrong = 0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    Eigen::Index arg;
    z.row(i).maxCoeff(&arg);
    if (arg != data.labels[static_cast<std::size_t>(i)]) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(z.rows());
}

inline FeatureSet extract_features(const Network& net, const Matrix& inputs, const std::vector<int>& labels,
                                   int num_classes) {
  if (static_cast<Eigen::Index>(labels.size()) != inputs.rows()) {
    throw DimensionError("extract_features: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(inputs.rows()) + " inputs");
  }
  FeatureSet fs;
  forward_batch(net, inputs, &fs.features);
  fs.labels = labels;
  fs.num_classes = num_classes;
  fs.validate();
  for (int c : fs.class_counts()) {
    if (c == 0) throw std::invalid_argument("extract_features: empty class (filter labels first)");
  }
  return fs;
}

}  // namespace ncprobe
