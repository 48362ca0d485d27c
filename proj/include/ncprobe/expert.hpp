#pragma once

// Scripted pushing expert.
//
// The expert plans one push at a time. Candidate contacts are sampled along
// the outer boundary; for each, a short push is simulated and the candidate
// whose simulated trajectory gets closest to the target (translation error
// plus weighted rotation error) wins. The pusher then travels around the
// object to an approach point behind the contact and pushes for the planned
// number of steps before replanning.

#include <cmath>
#include <limits>
#include <optional>
#include <algorithm>
#include <numbers>
#include <vector>

#include "ncprobe/pushsim.hpp"
#include "ncprobe/rng.hpp"

namespace ncprobe {

struct ExpertConfig {
  double success = 0.9;             // coverage at which the expert stops
  double rotation_threshold = 0.3;  // |theta error| above which rotation is prioritized
  double approach_offset = 0.25;    // approach point distance behind the contact
  double clearance = 0.1;           // minimum free-space distance to the object
  double orbit_margin = 0.5;        // orbit radius beyond the bounding radius
  int lookahead = 25;               // max simulated push steps per candidate
  double slow_factor = 0.35;        // fine-correction speed as a fraction of v_max
  double travel_weight = 0.02;      // cost per unit of approach travel
  double dt = 1.0;
  std::vector<double> fractions{0.15, 0.5, 0.85};
  std::vector<double> angles{-0.25, 0.0, 0.25};
  double jitter = 0.08;  // random perturbation of contact fractions
};

struct ExpertAction {
  Vec2 velocity = Vec2::Zero();
  bool done = false;
};

/// Pose error cost used by the planner.
inline double pose_cost(const SimState& s, double rotation_weight) {
  const Pose2 e = between(s.target, s.object);
  return std::hypot(e.x, e.y) + rotation_weight * std::abs(e.theta);
}

class ScriptedExpert {
 public:
  explicit ScriptedExpert(ExpertConfig cfg = {}) : cfg_(std::move(cfg)) {}

  const ExpertConfig& config() const { return cfg_; }

  void reset() { phase_ = Phase::kIdle; }

  ExpertAction act(const SimState& s, RngStream& rng) {
    if (coverage(s) >= cfg_.success) {
      phase_ = Phase::kIdle;
      return {Vec2::Zero(), true};
    }
    for (int attempt = 0; attempt < 3; ++attempt) {
      if (phase_ == Phase::kIdle) plan(s, rng);
      if (phase_ == Phase::kApproach || phase_ == Phase::kRay) {
        if (auto v = approach(s)) return {*v, false};
      }
      if (phase_ == Phase::kPush) {
        if (auto v = push(s)) return {*v, false};
      }
      phase_ = Phase::kIdle;
    }
    return {Vec2::Zero(), false};
  }

 private:
  enum class Phase { kIdle, kApproach, kRay, kPush };

  struct Candidate {
    Vec2 contact;    // body frame
    Vec2 direction;  // unit push direction, body frame
    double speed = 0.0;
    int steps = 0;
    double score = std::numeric_limits<double>::infinity();
  };

  double rotation_weight(const SimState& s) const {
    const Pose2 e = between(s.target, s.object);
    const double r = s.shape->bounding_radius();
    return std::abs(e.theta) > cfg_.rotation_threshold ? 2.0 * r : r;
  }

  /// Pusher placed at the contact point and driven along the body-frame direction.
  Candidate simulate(const SimState& s, const Vec2& contact, const Vec2& dir, double speed, double rho) const {
    SimState sim = s;
    sim.pusher = s.object.apply(contact);
    Candidate c{contact, dir, speed, 0, pose_cost(s, rho)};
    double best = c.score;
    for (int k = 1; k <= cfg_.lookahead; ++k) {
      sim = step(sim, sim.object.rotate_in(dir) * speed, cfg_.dt);
      const double j = pose_cost(sim, rho);
      if (j < best) {
        best = j;
        c.steps = k;
      }
      if (contact_state(sim).distance > 0.05) break;
    }
    c.score = best;
    return c;
  }

  void plan(const SimState& s, RngStream& rng) {
    const Shape& shape = *s.shape;
    const double rho = rotation_weight(s);
    const double j0 = pose_cost(s, rho);
    const double v_max = s.params.v_max;
    std::vector<double> speeds{v_max};
    if (j0 < 1.0) speeds.push_back(cfg_.slow_factor * v_max);
    const Vec2 q = s.object.apply_inverse(s.pusher);

    Candidate best;
    for (const auto& seg : shape.boundary()) {
      for (double f : cfg_.fractions) {
        const double t = std::clamp(f + rng.uniform(-cfg_.jitter, cfg_.jitter), 0.02, 0.98);
        const Vec2 r = seg.a + t * (seg.b - seg.a);
        for (double a : cfg_.angles) {
          const Vec2 dir = rotate(-seg.normal, a);
          if (!reachable(shape, r, dir)) continue;
          const Vec2 approach_pt = r - cfg_.approach_offset * dir;
          const double travel = (q - approach_pt).norm();
          for (double v : speeds) {
            Candidate c = simulate(s, r, dir, v, rho);
            if (c.steps == 0) continue;
            c.score += cfg_.travel_weight * travel;
            if (c.score < best.score) best = c;
          }
        }
      }
    }
    if (!std::isfinite(best.score)) {
      phase_ = Phase::kIdle;
      return;
    }
    plan_ = best;
    pushed_ = 0;
    touched_ = false;
    const bool at_contact = (q - plan_.contact).norm() < 0.05 && contact_state(s).in_contact;
    phase_ = at_contact ? Phase::kPush : Phase::kApproach;
    if (at_contact) touched_ = true;
  }

  /// The approach point must sit in free space with a clear ray back out.
  bool reachable(const Shape& shape, const Vec2& r, const Vec2& dir) const {
    const Vec2 a = r - cfg_.approach_offset * dir;
    if (shape.nearest(a).distance < 0.8 * cfg_.approach_offset) return false;
    const Vec2 far = a - (2.0 * shape.bounding_radius() + cfg_.orbit_margin) * dir;
    return shape.segment_distance(a, far) > 0.5 * cfg_.clearance;
  }

  Vec2 limit(const Vec2& v, double v_max) const {
    const double n = v.norm();
    return n > v_max ? Vec2(v * (v_max / n)) : v;
  }

  std::optional<Vec2> approach(const SimState& s) {
    const Shape& shape = *s.shape;
    const double v_max = s.params.v_max;
    const double reach = v_max * cfg_.dt;
    const Vec2 a_body = plan_.contact - cfg_.approach_offset * plan_.direction;
    const Vec2 a = s.object.apply(a_body);
    const Vec2 p = s.pusher;
    const Vec2 q = s.object.apply_inverse(p);
    if ((a - p).norm() <= 1e-9) {
      phase_ = Phase::kPush;
      return std::nullopt;
    }
    const Vec2 qa = a_body;
    if (phase_ == Phase::kRay || shape.segment_distance(q, qa) >= cfg_.clearance) {
      return limit((a - p) / cfg_.dt, v_max);
    }
    const Vec2 o = s.object.translation();
    const double radius = shape.bounding_radius() + cfg_.orbit_margin;
    // Entry point on the orbit circle along the clear ray behind the approach point.
    Vec2 entry_body = qa;
    for (int i = 0; i < 400 && entry_body.norm() < radius; ++i) entry_body -= 0.05 * plan_.direction;
    const Vec2 entry = s.object.apply(entry_body);
    if ((entry - p).norm() <= reach) {
      phase_ = Phase::kRay;
      return limit((entry - p) / cfg_.dt, v_max);
    }
    const Vec2 rel = p - o;
    const double rho = rel.norm();
    if (rho < radius - 1e-6) {
      const auto near = shape.nearest(q);
      Vec2 out = s.object.rotate_in(near.normal) + rel / std::max(rho, 1e-9);
      if (out.norm() < 1e-9) out = rel;
      return limit(out.normalized() * reach, v_max);
    }
    const double phi = std::atan2(rel.y(), rel.x());
    const Vec2 er = entry - o;
    const double goal = std::atan2(er.y(), er.x());
    const double diff = wrap_angle(goal - phi);
    const double dphi = std::copysign(std::min(std::abs(diff), reach / radius), diff);
    const Vec2 next = o + radius * Vec2(std::cos(phi + dphi), std::sin(phi + dphi));
    return limit((next - p) / cfg_.dt, v_max);
  }

  std::optional<Vec2> push(const SimState& s) {
    const auto cs = contact_state(s);
    if (cs.in_contact) touched_ = true;
    if (touched_) {
      if (pushed_ >= plan_.steps || cs.distance > 0.05) return std::nullopt;
      ++pushed_;
    } else if ((s.object.apply_inverse(s.pusher) - plan_.contact).norm() > 2.0 * cfg_.approach_offset) {
      return std::nullopt;
    }
    return s.object.rotate_in(plan_.direction) * plan_.speed;
  }

  ExpertConfig cfg_;
  Phase phase_ = Phase::kIdle;
  Candidate plan_;
  int pushed_ = 0;
  bool touched_ = false;
};

}  // namespace ncprobe
