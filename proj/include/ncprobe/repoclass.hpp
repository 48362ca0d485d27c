#pragma once

// Relative-pose orthant (REPO) labels for pushing samples.
//
// A relative pose (x, y, theta) is binned per dimension into b equal-width
// bins over [-L, L] (translation) and (-pi, pi] (rotation), clamping values
// outside the range. The class index is row-major (x, y, theta), so for b = 2
// it equals 4[x >= 0] + 2[y >= 0] + [theta >= 0]. Zero lands in the upper bin.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "ncprobe/demo.hpp"
#include "ncprobe/geometry.hpp"

namespace ncprobe {

using RelPose = Pose2;

/// Pose b expressed in the frame of pose a.
inline RelPose relative_pose(const Pose2& a, const Pose2& b) {
  const Vec2 t = a.rotate_out(b.translation() - a.translation());
  return {t.x(), t.y(), wrap_angle(b.theta - a.theta)};
}

struct RepoBinning {
  int bins = 2;
  // Half-extent of the task offset distribution. A wider range leaves every
  // reachable relative pose in the two central bins, so b = 4 would equal b = 2.
  double range_x = 4.0;
  double range_y = 4.0;

  int num_classes() const { return bins * bins * bins; }

  void validate() const {
    if (bins != 2 && bins != 4 && bins != 6) {
      throw std::invalid_argument("RepoBinning: bins must be 2, 4 or 6, got " + std::to_string(bins));
    }
    if (!(range_x > 0.0) || !(range_y > 0.0)) throw std::invalid_argument("RepoBinning: ranges must be positive");
  }
};

inline int bin_of(double value, double lo, double hi, int bins) {
  const double u = (value - lo) / (hi - lo) * bins;
  return std::clamp(static_cast<int>(std::floor(u)), 0, bins - 1);
}

inline int bin_index(const RelPose& r, const RepoBinning& b) {
  const int n = b.bins;
  const int ix = bin_of(r.x, -b.range_x, b.range_x, n);
  const int iy = bin_of(r.y, -b.range_y, b.range_y, n);
  const int it = bin_of(r.theta, -std::numbers::pi, std::numbers::pi, n);
  return (ix * n + iy) * n + it;
}

enum class LabelStrategy { kGoal, kAction };

inline std::string to_string(LabelStrategy s) { return s == LabelStrategy::kGoal ? "goal" : "action"; }

inline LabelStrategy strategy_from_string(const std::string& s) {
  if (s == "goal") return LabelStrategy::kGoal;
  if (s == "action") return LabelStrategy::kAction;
  throw std::invalid_argument("unknown labeling strategy '" + s + "' (expected goal or action)");
}

/// Target pose relative to the object at step t.
inline int goal_label(const Demonstration& d, int t, const RepoBinning& b) {
  return bin_index(relative_pose(d.states.at(static_cast<std::size_t>(t)).object, d.target), b);
}

/// Smallest H' >= h such that the pusher is out of contact at t + H', capped
/// at the final state.
inline int episode_horizon(const Demonstration& d, int t, int h) {
  const int last = static_cast<int>(d.states.size()) - 1;
  int hp = h;
  while (t + hp < last && d.contact[static_cast<std::size_t>(t + hp)]) ++hp;
  return std::min(hp, last - t);
}

/// Object displacement over the contact episode starting at step t.
inline int action_label(const Demonstration& d, int t, int h, const RepoBinning& b) {
  if (t < 0 || t >= static_cast<int>(d.states.size())) throw std::out_of_range("action_label: t outside demo");
  const int hp = episode_horizon(d, t, h);
  return bin_index(relative_pose(d.states[static_cast<std::size_t>(t)].object,
                                 d.states[static_cast<std::size_t>(t + hp)].object),
                   b);
}

inline std::vector<int> label_dataset(const std::vector<Sample>& samples, const std::vector<Demonstration>& demos,
                                      LabelStrategy strategy, const RepoBinning& b, int h) {
  b.validate();
  std::vector<int> labels;
  labels.reserve(samples.size());
  for (const auto& s : samples) {
    const Demonstration& d = demos.at(static_cast<std::size_t>(s.demo));
    labels.push_back(strategy == LabelStrategy::kGoal ? goal_label(d, s.t, b) : action_label(d, s.t, h, b));
  }
  return labels;
}

}  // namespace ncprobe
