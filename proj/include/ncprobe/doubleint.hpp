#pragma once

// Minimum-time double integrator: q'' = u with |u| <= 1.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "ncprobe/linalg.hpp"
#include "ncprobe/mlp.hpp"
#include "ncprobe/rng.hpp"

namespace ncprobe::doubleint {

struct State2 {
  double q = 0.0;
  double v = 0.0;

  double norm() const { return std::hypot(q, v); }
  friend bool operator==(const State2&, const State2&) = default;
};

/// Closed-form bang-bang policy. Returns +1, 0 or -1.
inline int optimal_control(const State2& x) {
  if (x.q == 0.0 && x.v == 0.0) return 0;
  const double half_v2 = 0.5 * x.v * x.v;
  if ((x.v < 0.0 && x.q <= half_v2) || (x.v >= 0.0 && x.q < -half_v2)) return +1;
  return -1;
}

/// Exact integration under a control held constant for dt.
inline State2 step(const State2& x, double u, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("doubleint::step: dt must be > 0");
  if (std::abs(u) > 1.0) throw std::invalid_argument("doubleint::step: |u| must be <= 1");
  return {x.q + x.v * dt + 0.5 * u * dt * dt, x.v + u * dt};
}

// Class-index encoding of the three controls: +1 -> 0, 0 -> 1, -1 -> 2.
inline int control_to_label(int u) { return 1 - u; }
inline int label_to_control(int label) { return 1 - label; }

using Policy = std::function<double(const State2&)>;

struct Rollout {
  std::vector<State2> states;
  std::vector<double> controls;
  bool reached = false;
  double time = 0.0;  // time to the eps-ball when reached, elapsed time otherwise
};

inline Rollout rollout(const State2& x0, const Policy& policy, double dt, double max_time, double eps) {
  if (!(dt > 0.0) || !(eps > 0.0)) throw std::invalid_argument("rollout: dt and eps must be > 0");
  Rollout r;
  r.states.push_back(x0);
  State2 x = x0;
  if (x.norm() <= eps) {
    r.reached = true;
    return r;
  }
  long steps = 0;
  while (true) {
    const double u = policy(x);
    x = step(x, u, dt);
    ++steps;
    r.controls.push_back(u);
    r.states.push_back(x);
    r.time = static_cast<double>(steps) * dt;
    if (x.norm() <= eps) {
      r.reached = true;
      return r;
    }
    if (r.time >= max_time) return r;
  }
}

/// Number of sign changes among the nonzero controls of a rollout.
inline int count_switches(const std::vector<double>& controls) {
  int switches = 0;
  double last = 0.0;
  for (double u : controls) {
    if (u == 0.0) continue;
    if (last != 0.0 && (u > 0.0) != (last > 0.0)) ++switches;
    last = u;
  }
  return switches;
}

struct OracleConfig {
  // Optimal trajectories from the radius-10 ball overshoot to |q| ~ 50.5 and
  // reach |v| <= 10, so the grid extends past both.
  double q_extent = 64.0;  // grid covers |q| <= q_extent
  double v_extent = 12.0;  // and |v| <= v_extent
  int resolution = 961;    // nodes per axis
  double dt = 1e-3;        // integration step for the extracted trajectory
  double eps = 0.02;       // target ball radius
  double tol = 1e-10;      // value-iteration convergence threshold
  int max_sweeps = 20000;
  double max_time = 100.0;
};

class OutsideGridError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Minimum time to the eps-ball around the origin by semi-Lagrangian value
/// iteration with controls {-1, 0, +1}.
///
/// The grid is uniform in (s, v) with s = sign(q) sqrt(|q|). In these
/// coordinates the minimum-time function is close to positively homogeneous
/// of degree one, so bilinear interpolation stays accurate near the origin
/// where the function has a square-root cusp in q. Each node looks ahead over
/// the exact arc for a step tau that moves it about one cell. Sweeps are
/// Gauss-Seidel in alternating directions.
///
/// time_from() integrates the greedy policy of the converged value function at
/// the fine step dt and reports the time the trajectory enters the eps-ball.
class MinTimeOracle {
 public:
  explicit MinTimeOracle(OracleConfig cfg = {}) : cfg_(cfg) {
    if (cfg_.resolution < 3 || !(cfg_.q_extent > 0.0) || !(cfg_.v_extent > 0.0)) {
      throw std::invalid_argument("MinTimeOracle: bad grid");
    }
    s_extent_ = std::sqrt(cfg_.q_extent);
    hs_ = 2.0 * s_extent_ / (cfg_.resolution - 1);
    hv_ = 2.0 * cfg_.v_extent / (cfg_.resolution - 1);
    solve();
  }

  const OracleConfig& config() const { return cfg_; }
  int sweeps() const { return sweeps_; }
  int resolution() const { return cfg_.resolution; }

  State2 node(int i, int j) const {
    const double s = -s_extent_ + hs_ * i;
    return {s * std::abs(s), -cfg_.v_extent + hv_ * j};
  }
  double node_value(int i, int j) const { return value_[index(i, j)]; }

  bool inside(const State2& x) const { return std::abs(x.q) <= cfg_.q_extent && std::abs(x.v) <= cfg_.v_extent; }

  /// Bilinear interpolation of the converged value function.
  double value(const State2& x) const {
    if (!inside(x)) throw OutsideGridError("MinTimeOracle: state outside grid");
    return interpolate(x);
  }

  /// Greedy control of the value function at x.
  int greedy_control(const State2& x) const {
    const double tau = lookahead(x);
    int best_u = 0;
    double best = std::numeric_limits<double>::infinity();
    for (int u : {+1, -1, 0}) {
      const double c = arc_cost(x, u, tau);
      if (c < best - 1e-12) {
        best = c;
        best_u = u;
      }
    }
    return best_u;
  }

  /// Approximate minimum time from x0 to the eps-ball.
  double time_from(const State2& x0) const {
    if (!inside(x0)) throw OutsideGridError("MinTimeOracle: start state outside grid");
    if (x0.norm() <= cfg_.eps) return 0.0;
    const Rollout r = rollout(x0, [this](const State2& x) { return static_cast<double>(greedy_control(x)); },
                              cfg_.dt, cfg_.max_time, cfg_.eps);
    if (!r.reached) return interpolate(x0);
    return r.time;
  }

 private:
  static constexpr double kUnreachable = 1e6;

  std::size_t index(int i, int j) const {
    return static_cast<std::size_t>(i) * static_cast<std::size_t>(cfg_.resolution) + static_cast<std::size_t>(j);
  }

  static double warp(double q) { return q >= 0.0 ? std::sqrt(q) : -std::sqrt(-q); }

  double lookahead(const State2& x) const {
    const double s = std::abs(warp(x.q));
    const double cell_q = 2.0 * s * hs_ + hs_ * hs_;
    const double speed = std::abs(x.v);
    double tau = hv_;
    if (speed * tau > cell_q) tau = cell_q / speed;
    return std::max(tau, 1e-4);
  }

  double interpolate(const State2& x) const {
    if (x.norm() <= cfg_.eps) return 0.0;
    if (!inside(x)) return kUnreachable;
    const double fi = (warp(x.q) + s_extent_) / hs_;
    const double fj = (x.v + cfg_.v_extent) / hv_;
    const int n = cfg_.resolution;
    const int i = std::clamp(static_cast<int>(std::floor(fi)), 0, n - 2);
    const int j = std::clamp(static_cast<int>(std::floor(fj)), 0, n - 2);
    const double a = fi - i;
    const double b = fj - j;
    return (1 - a) * (1 - b) * value_[index(i, j)] + a * (1 - b) * value_[index(i + 1, j)] +
           (1 - a) * b * value_[index(i, j + 1)] + a * b * value_[index(i + 1, j + 1)];
  }

  /// Time of first entry into the eps-ball along the arc, or a negative value.
  double entry_time(const State2& x, int u, double tau) const {
    const double reach = x.norm() - (std::abs(x.v) + 1.0) * tau - 0.5 * tau * tau;
    if (reach > cfg_.eps) return -1.0;
    constexpr int kSamples = 64;
    for (int k = 0; k <= kSamples; ++k) {
      const double t = tau * k / kSamples;
      const State2 y{x.q + x.v * t + 0.5 * u * t * t, x.v + u * t};
      if (y.norm() <= cfg_.eps) return t;
    }
    return -1.0;
  }

  double arc_cost(const State2& x, int u, double tau) const {
    const double te = entry_time(x, u, tau);
    if (te >= 0.0) return te;
    const State2 y{x.q + x.v * tau + 0.5 * u * tau * tau, x.v + u * tau};
    return tau + interpolate(y);
  }

  void solve() {
    const int n = cfg_.resolution;
    value_.assign(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), kUnreachable);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (node(i, j).norm() <= cfg_.eps) value_[index(i, j)] = 0.0;
      }
    }
    for (sweeps_ = 1; sweeps_ <= cfg_.max_sweeps; ++sweeps_) {
      double change = 0.0;
      const bool fwd_i = (sweeps_ % 2) == 1;
      const bool fwd_j = ((sweeps_ / 2) % 2) == 1;
      for (int ii = 0; ii < n; ++ii) {
        const int i = fwd_i ? ii : n - 1 - ii;
        for (int jj = 0; jj < n; ++jj) {
          const int j = fwd_j ? jj : n - 1 - jj;
          const State2 x = node(i, j);
          if (x.norm() <= cfg_.eps) continue;
          const double tau = lookahead(x);
          double best = kUnreachable;
          for (int u : {+1, 0, -1}) best = std::min(best, arc_cost(x, u, tau));
          double& slot = value_[index(i, j)];
          change = std::max(change, std::abs(best - slot));
          slot = best;
        }
      }
      if (change < cfg_.tol) break;
    }
  }

  OracleConfig cfg_;
  double s_extent_ = 0.0;
  double hs_ = 0.0;
  double hv_ = 0.0;
  int sweeps_ = 0;
  std::vector<double> value_;
};

struct OracleCheckRow {
  State2 start;
  double policy_time = 0.0;
  double oracle_time = 0.0;
  bool within = false;
};

/// Closed-loop time of optimal_control against the oracle from n starts drawn
/// uniformly in the radius ball. A row is within tolerance when
/// |policy - oracle| <= rel_tol * oracle + 2 dt.
inline std::vector<OracleCheckRow> oracle_check(const MinTimeOracle& oracle, int n, double radius,
                                                std::uint64_t seed, double rel_tol = 0.05) {
  const OracleConfig& oc = oracle.config();
  RngStream rng(seed);
  const Policy policy = [](const State2& x) { return static_cast<double>(optimal_control(x)); };
  std::vector<OracleCheckRow> rows;
  for (int k = 0; k < n; ++k) {
    const Vector p = sample_in_ball(rng, radius, 2);
    OracleCheckRow row;
    row.start = {p[0], p[1]};
    row.policy_time = rollout(row.start, policy, oc.dt, oc.max_time, oc.eps).time;
    row.oracle_time = oracle.time_from(row.start);
    row.within = std::abs(row.policy_time - row.oracle_time) <= rel_tol * row.oracle_time + 2.0 * oc.dt;
    rows.push_back(row);
  }
  return rows;
}

struct BCDataset {
  std::vector<State2> inputs;
  std::vector<int> labels;  // class index, see control_to_label
  int n_per_class = 0;

  LabeledSet labeled() const {
    LabeledSet s;
    s.inputs.resize(static_cast<Eigen::Index>(inputs.size()), 2);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      s.inputs(static_cast<Eigen::Index>(i), 0) = inputs[i].q;
      s.inputs(static_cast<Eigen::Index>(i), 1) = inputs[i].v;
    }
    s.labels = labels;
    s.num_classes = 3;
    return s;
  }
};

/// Draws states uniformly in the ball until n states of each of the +1 and -1
/// classes are collected (surplus draws are rejected), then appends n copies
/// of the origin for the 0 class. Samples are stored in blocks +1, 0, -1.
inline BCDataset generate_bc_dataset(int n, double radius, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("generate_bc_dataset: n must be >= 1");
  RngStream rng(seed);
  std::vector<State2> plus, minus;
  plus.reserve(static_cast<std::size_t>(n));
  minus.reserve(static_cast<std::size_t>(n));
  while (static_cast<int>(plus.size()) < n || static_cast<int>(minus.size()) < n) {
    const Vector p = sample_in_ball(rng, radius, 2);
    const State2 x{p[0], p[1]};
    const int u = optimal_control(x);
    if (u > 0 && static_cast<int>(plus.size()) < n) plus.push_back(x);
    if (u < 0 && static_cast<int>(minus.size()) < n) minus.push_back(x);
  }
  BCDataset d;
  d.n_per_class = n;
  for (const auto& x : plus) {
    d.inputs.push_back(x);
    d.labels.push_back(control_to_label(+1));
  }
  for (int i = 0; i < n; ++i) {
    d.inputs.push_back(State2{0.0, 0.0});
    d.labels.push_back(control_to_label(0));
  }
  for (const auto& x : minus) {
    d.inputs.push_back(x);
    d.labels.push_back(control_to_label(-1));
  }
  return d;
}

/// The probe architecture 2 -> 64 -> 64 -> 64 -> 64 -> 3 -> 3.
inline std::vector<int> probe_layer_sizes() { return {2, 64, 64, 64, 64, 3, 3}; }

struct ProbeConfig {
  Activation hidden = Activation::kTanh;  // also applied to the 3-d feature layer
  int epochs = 1000;
  int batch_size = 256;
  double lr = 1e-3;
  double weight_decay = 1.0;  // decoupled
  std::uint64_t seed = 0;
};

inline Network init_probe(const ProbeConfig& cfg) { return init_network(probe_layer_sizes(), cfg.hidden, cfg.seed); }

/// Cross-entropy training of the probe. The callback sees every epoch.
inline std::pair<Network, TrainHistory> train_probe(const BCDataset& data, const ProbeConfig& cfg,
                                                    const EpochCallback& on_epoch = {}) {
  TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch_size;
  tc.optimizer.lr = cfg.lr;
  tc.optimizer.weight_decay = cfg.weight_decay;
  tc.seed = cfg.seed;
  return train_classifier(data.labeled(), init_probe(cfg), tc, on_epoch);
}

}  // namespace ncprobe::doubleint
