#pragma once

// Demonstrations recorded from the scripted expert and the training samples
// cut from them.

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "ncprobe/expert.hpp"
#include "ncprobe/pushsim.hpp"
#include "ncprobe/rng.hpp"

namespace ncprobe {

struct DemoState {
  Pose2 object;
  Vec2 pusher = Vec2::Zero();
  friend bool operator==(const DemoState& a, const DemoState& b) {
    return a.object == b.object && a.pusher == b.pusher;
  }
};

/// States I_0..I_l, controls u_0..u_{l-1}, and a contact flag per state.
struct Demonstration {
  ShapeKind shape = ShapeKind::kT;
  double dt = 1.0;
  Pose2 target;
  std::vector<DemoState> states;
  std::vector<Vec2> controls;
  std::vector<bool> contact;
  bool success = false;

  std::size_t length() const { return controls.size(); }

  friend bool operator==(const Demonstration& a, const Demonstration& b) {
    return a.shape == b.shape && a.dt == b.dt && a.target == b.target && a.states == b.states &&
           a.controls == b.controls && a.contact == b.contact && a.success == b.success;
  }
};

/// Simulation state at step t of a demo (shape shared across calls).
inline SimState demo_state(const Demonstration& d, std::size_t t, const std::shared_ptr<const Shape>& shape) {
  SimState s;
  s.shape = shape;
  s.params = default_params(*shape);
  s.object = d.states.at(t).object;
  s.pusher = d.states.at(t).pusher;
  s.target = d.target;
  return s;
}

struct TaskConfig {
  double min_distance = 1.5;
  double max_distance = 3.5;
  double max_rotation = 1.2;
  double pusher_min_gap = 0.3;
  double pusher_max_gap = 1.5;
};

/// Random pushing task with the target at the origin.
inline SimState random_task(ShapeKind kind, RngStream& rng, const TaskConfig& cfg = {}) {
  const double dist = rng.uniform(cfg.min_distance, cfg.max_distance);
  const double dir = rng.uniform(-std::numbers::pi, std::numbers::pi);
  const double theta = rng.uniform(-cfg.max_rotation, cfg.max_rotation);
  const Pose2 object(dist * std::cos(dir), dist * std::sin(dir), theta);
  SimState s = make_state(kind, object, Pose2{}, Vec2::Zero());
  const double gap = s.shape->bounding_radius() + rng.uniform(cfg.pusher_min_gap, cfg.pusher_max_gap);
  const double pdir = rng.uniform(-std::numbers::pi, std::numbers::pi);
  s.pusher = object.translation() + gap * Vec2(std::cos(pdir), std::sin(pdir));
  return s;
}

/// Runs the expert from `initial` until it reports done or `max_steps`
/// controls have been issued.
inline Demonstration record_demo(const SimState& initial, ScriptedExpert& expert, double dt, int max_steps,
                                 RngStream& rng, ShapeKind kind = ShapeKind::kT) {
  if (max_steps < 1) throw std::invalid_argument("record_demo: max_steps must be >= 1");
  expert.reset();
  Demonstration d;
  d.shape = kind;
  d.dt = dt;
  d.target = initial.target;
  SimState s = initial;
  auto log_state = [&](const SimState& st) {
    d.states.push_back({st.object, st.pusher});
    d.contact.push_back(contact_state(st).in_contact);
  };
  log_state(s);
  for (int k = 0; k < max_steps; ++k) {
    const ExpertAction a = expert.act(s, rng);
    if (a.done) break;
    s = step(s, a.velocity, dt);
    d.controls.push_back(a.velocity);
    log_state(s);
  }
  d.success = coverage(s) >= expert.config().success;
  return d;
}

/// Observation window of K states ending at t (flattened, oldest first) and
/// the H controls starting at t (flattened).
struct Sample {
  Vector observation;
  Vector controls;
  int demo = 0;
  int t = 0;
};

inline Vector demo_observation(const Demonstration& d, std::size_t t) {
  const Pose2 rel = between(d.target, d.states[t].object);
  const Vec2 p = d.target.apply_inverse(d.states[t].pusher);
  Vector o(kObservationDim);
  o << rel.x, rel.y, std::cos(rel.theta), std::sin(rel.theta), p.x(), p.y();
  return o;
}

/// Stacks K observations ending at t; indices before 0 repeat the first.
inline Vector observation_window(const std::vector<Vector>& obs, int t, int k) {
  Vector w(k * kObservationDim);
  for (int j = 0; j < k; ++j) {
    const int idx = std::max(0, t - (k - 1) + j);
    w.segment(j * kObservationDim, kObservationDim) = obs[static_cast<std::size_t>(idx)];
  }
  return w;
}

/// One sample per t in [0, l - H]; empty when the demo is shorter than H.
inline std::vector<Sample> extract_samples(const Demonstration& d, int k, int h, int demo_id = 0) {
  if (k < 1 || h < 1) throw std::invalid_argument("extract_samples: K and H must be >= 1");
  const int l = static_cast<int>(d.length());
  std::vector<Sample> out;
  if (l < h) return out;
  std::vector<Vector> obs;
  obs.reserve(d.states.size());
  for (std::size_t t = 0; t < d.states.size(); ++t) obs.push_back(demo_observation(d, t));
  for (int t = 0; t + h <= l; ++t) {
    Sample s;
    s.observation = observation_window(obs, t, k);
    s.controls.resize(2 * h);
    for (int j = 0; j < h; ++j) s.controls.segment(2 * j, 2) = d.controls[static_cast<std::size_t>(t + j)];
    s.demo = demo_id;
    s.t = t;
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<Sample> extract_samples(const std::vector<Demonstration>& demos, int k, int h) {
  std::vector<Sample> out;
  for (std::size_t i = 0; i < demos.size(); ++i) {
    auto s = extract_samples(demos[i], k, h, static_cast<int>(i));
    out.insert(out.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
  }
  return out;
}

/// Seeded batch of expert demonstrations; demo i uses stream split(seed, i).
inline std::vector<Demonstration> generate_demos(ShapeKind kind, int n, uint64_t seed, int max_steps = 500,
                                                 const ExpertConfig& ecfg = {}, const TaskConfig& tcfg = {}) {
  std::vector<Demonstration> demos;
  demos.reserve(static_cast<std::size_t>(n));
  ScriptedExpert expert(ecfg);
  for (int i = 0; i < n; ++i) {
    RngStream rng(split_seed(seed, static_cast<uint64_t>(i)));
    const SimState task = random_task(kind, rng, tcfg);
    demos.push_back(record_demo(task, expert, ecfg.dt, max_steps, rng, kind));
  }
  return demos;
}

}  // namespace ncprobe
