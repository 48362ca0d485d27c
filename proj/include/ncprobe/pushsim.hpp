#pragma once

// Quasi-static planar pushing of a polygonal object by a point pusher.
//
// Objects are unions of interior-disjoint convex parts in a body frame whose
// origin is the centroid. Contact mechanics use an ellipsoidal limit surface
// H(f, m) = |f|^2 + (m / c)^2 with point-contact Coulomb friction: the pusher
// sticks while its velocity lies inside the motion cone and slides along the
// nearer cone edge otherwise.

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "ncprobe/geometry.hpp"
#include "ncprobe/linalg.hpp"

namespace ncprobe {

enum class ShapeKind { kT, kSquare, kR, kOCarved, kB };

inline std::string to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::kT: return "T";
    case ShapeKind::kSquare: return "square";
    case ShapeKind::kR: return "R";
    case ShapeKind::kOCarved: return "O";
    case ShapeKind::kB: return "B";
  }
  return "?";
}

inline ShapeKind shape_from_string(const std::string& s) {
  if (s == "T") return ShapeKind::kT;
  if (s == "square") return ShapeKind::kSquare;
  if (s == "R") return ShapeKind::kR;
  if (s == "O" || s == "O-carved") return ShapeKind::kOCarved;
  if (s == "B") return ShapeKind::kB;
  throw std::invalid_argument("unknown shape kind '" + s + "' (expected T, square, R, O, B)");
}

/// A piece of the outer boundary of a shape with its outward normal.
struct BoundarySegment {
  Vec2 a;
  Vec2 b;
  Vec2 normal;
};

class Shape {
 public:
  /// Builds a shape from convex CCW parts. When `center` is set the parts are
  /// translated so the area centroid sits at the body origin.
  static Shape from_parts(std::vector<Polygon> parts, bool center = true) {
    if (parts.empty()) throw std::invalid_argument("Shape: no parts");
    double area = 0.0;
    Vec2 moment = Vec2::Zero();
    for (const auto& p : parts) {
      if (!is_convex_ccw(p)) throw std::invalid_argument("Shape: part is not convex counter-clockwise");
      const double a = signed_area(p);
      area += a;
      moment += a * polygon_centroid(p);
    }
    if (!(area > 0.0)) throw std::invalid_argument("Shape: zero area");
    if (center) {
      const Vec2 c = moment / area;
      for (auto& p : parts)
        for (auto& v : p) v -= c;
    }
    Shape s;
    s.parts_ = std::move(parts);
    s.area_ = area;
    s.build_boundary();
    s.compute_radii();
    return s;
  }

  const std::vector<Polygon>& parts() const { return parts_; }
  const std::vector<BoundarySegment>& boundary() const { return boundary_; }
  double area() const { return area_; }
  /// Largest vertex distance from the body origin.
  double bounding_radius() const { return bounding_radius_; }
  /// Mean distance of the area from the body origin; used as the default
  /// limit-surface torque-to-force ratio.
  double mean_radius() const { return mean_radius_; }
  double diameter() const { return diameter_; }

  Vec2 centroid() const {
    Vec2 m = Vec2::Zero();
    for (const auto& p : parts_) m += signed_area(p) * polygon_centroid(p);
    return m / area_;
  }

  /// True if q lies inside some part by more than `margin`.
  bool strictly_contains(const Vec2& q, double margin = 0.0) const {
    for (const auto& p : parts_)
      if (strictly_inside(p, q, margin)) return true;
    return false;
  }

  bool contains(const Vec2& q) const {
    for (const auto& p : parts_)
      if (ncprobe::contains(p, q)) return true;
    return false;
  }

  struct Nearest {
    Vec2 point;
    Vec2 normal;
    double distance = 0.0;  // negative inside the shape
  };

  /// Nearest point on the outer boundary with the outward normal there.
  Nearest nearest(const Vec2& q) const {
    Nearest best;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (const auto& seg : boundary_) {
      const Vec2 c = closest_on_segment(seg.a, seg.b, q);
      const double d2 = (q - c).squaredNorm();
      if (d2 < best_d2) {
        best_d2 = d2;
        best.point = c;
        best.normal = seg.normal;
      }
    }
    const double d = std::sqrt(best_d2);
    const bool inside = strictly_contains(q);
    if (!inside && d > 1e-9) best.normal = (q - best.point) / d;
    best.distance = inside ? -d : d;
    return best;
  }

  /// Minimum distance from segment p0 -> p1 to the shape (0 if they meet).
  double segment_distance(const Vec2& p0, const Vec2& p1) const {
    for (const auto& p : parts_) {
      if (ncprobe::contains(p, p0) || segment_entry(p, p0, p1)) return 0.0;
    }
    double d2 = std::numeric_limits<double>::infinity();
    for (const auto& seg : boundary_) {
      d2 = std::min(d2, (closest_on_segment(p0, p1, seg.a) - seg.a).squaredNorm());
      d2 = std::min(d2, (closest_on_segment(seg.a, seg.b, p0) - p0).squaredNorm());
      d2 = std::min(d2, (closest_on_segment(seg.a, seg.b, p1) - p1).squaredNorm());
    }
    return std::sqrt(d2);
  }

 private:
  void build_boundary() {
    boundary_.clear();
    for (std::size_t i = 0; i < parts_.size(); ++i) {
      const Polygon& poly = parts_[i];
      for (std::size_t e = 0; e < poly.size(); ++e) {
        const Vec2 a = poly[e];
        const Vec2 b = poly[(e + 1) % poly.size()];
        const Vec2 n = edge_normal(poly, e);
        const Vec2 dir = b - a;
        const double len = dir.norm();
        // Parameter intervals of this edge covered by opposite-facing collinear edges.
        std::vector<std::pair<double, double>> covered;
        for (std::size_t j = 0; j < parts_.size(); ++j) {
          if (j == i) continue;
          const Polygon& other = parts_[j];
          for (std::size_t f = 0; f < other.size(); ++f) {
            const Vec2 c = other[f];
            const Vec2 d = other[(f + 1) % other.size()];
            if (edge_normal(other, f).dot(n) > -1.0 + 1e-9) continue;
            if (std::abs(n.dot(c - a)) > 1e-9) continue;
            double t0 = (c - a).dot(dir) / (len * len);
            double t1 = (d - a).dot(dir) / (len * len);
            if (t0 > t1) std::swap(t0, t1);
            t0 = std::max(t0, 0.0);
            t1 = std::min(t1, 1.0);
            if (t1 > t0) covered.emplace_back(t0, t1);
          }
        }
        std::sort(covered.begin(), covered.end());
        double t = 0.0;
        auto emit = [&](double u0, double u1) {
          if ((u1 - u0) * len > 1e-9) boundary_.push_back({a + u0 * dir, a + u1 * dir, n});
        };
        for (const auto& [c0, c1] : covered) {
          if (c0 > t) emit(t, c0);
          t = std::max(t, c1);
        }
        if (t < 1.0) emit(t, 1.0);
      }
    }
  }

  void compute_radii() {
    bounding_radius_ = 0.0;
    Vec2 lo = Vec2::Constant(std::numeric_limits<double>::infinity());
    Vec2 hi = -lo;
    for (const auto& p : parts_) {
      for (const auto& v : p) {
        bounding_radius_ = std::max(bounding_radius_, v.norm());
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
      }
    }
    diameter_ = 0.0;
    for (const auto& p : parts_)
      for (const auto& q : parts_)
        for (const auto& u : p)
          for (const auto& v : q) diameter_ = std::max(diameter_, (u - v).norm());
    // Midpoint-rule quadrature of |r| over the area.
    constexpr int kCells = 400;
    const Vec2 h = (hi - lo) / kCells;
    double sum = 0.0;
    double count = 0.0;
    for (int i = 0; i < kCells; ++i) {
      for (int j = 0; j < kCells; ++j) {
        const Vec2 q = lo + Vec2((i + 0.5) * h.x(), (j + 0.5) * h.y());
        if (contains(q)) {
          sum += q.norm();
          count += 1.0;
        }
      }
    }
    mean_radius_ = sum / count;
  }

  std::vector<Polygon> parts_;
  std::vector<BoundarySegment> boundary_;
  double area_ = 0.0;
  double bounding_radius_ = 0.0;
  double mean_radius_ = 0.0;
  double diameter_ = 0.0;
};

/// Letter-like shapes, each roughly 3-4 units across.
inline Shape make_shape(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::kT:
      return Shape::from_parts({rectangle(-0.5, 0.0, 0.5, 3.0), rectangle(-2.0, 3.0, 2.0, 4.0)});
    case ShapeKind::kSquare:
      return Shape::from_parts({rectangle(-1.25, -1.25, 1.25, 1.25)});
    case ShapeKind::kR:
      return Shape::from_parts({
          rectangle(0.0, 0.0, 1.0, 4.0),                      // stem
          rectangle(1.0, 3.2, 2.2, 4.0),                      // cap
          rectangle(2.2, 2.0, 3.0, 4.0),                      // bowl side
          rectangle(1.0, 2.0, 2.2, 2.8),                      // waist
          Polygon{{2.0, 0.0}, {3.0, 0.0}, {2.2, 2.0}, {1.2, 2.0}},  // leg
      });
    case ShapeKind::kOCarved:
      // Ring with the top-right corner cut away.
      return Shape::from_parts({
          rectangle(0.0, 0.0, 3.0, 1.0),
          rectangle(0.0, 3.0, 2.0, 4.0),
          rectangle(0.0, 1.0, 1.0, 3.0),
          rectangle(2.0, 1.0, 3.0, 3.0),
      });
    case ShapeKind::kB:
      return Shape::from_parts({
          rectangle(0.0, 0.0, 1.0, 4.0),
          rectangle(1.0, 0.0, 2.0, 0.8),
          rectangle(1.0, 1.6, 2.0, 2.4),
          rectangle(1.0, 3.2, 2.0, 4.0),
          Polygon{{2.0, 0.0}, {2.8, 0.5}, {2.8, 1.7}, {2.0, 2.0}},
          Polygon{{2.0, 2.0}, {2.7, 2.4}, {2.7, 3.6}, {2.0, 4.0}},
      });
  }
  throw std::invalid_argument("make_shape: unknown kind");
}

/// Overlap area of the shape at two poses divided by the shape area.
inline double coverage_score(const Pose2& object, const Pose2& target, const Shape& shape) {
  double overlap = 0.0;
  std::vector<Polygon> tgt;
  tgt.reserve(shape.parts().size());
  for (const auto& p : shape.parts()) tgt.push_back(transform(p, target));
  const double reach = 2.0 * shape.bounding_radius();
  if ((object.translation() - target.translation()).norm() > reach) return 0.0;
  for (const auto& p : shape.parts()) {
    const Polygon obj = transform(p, object);
    for (const auto& t : tgt) overlap += intersection_area(obj, t);
  }
  return std::clamp(overlap / shape.area(), 0.0, 1.0);
}

struct SimParams {
  double limit_c = 1.0;          // limit-surface torque-to-force ratio
  double mu = 0.3;               // pusher-object friction coefficient
  double v_max = 0.15;           // pusher speed bound (units per step)
  double delta_contact = 1e-3;   // contact distance threshold
  double workspace = 8.0;        // pusher confined to [-w, w]^2
  double substep = 0.02;         // max pusher travel per integration substep
};

/// Default parameters for a shape; c is the shape's mean radius.
inline SimParams default_params(const Shape& shape) {
  SimParams p;
  p.limit_c = shape.mean_radius();
  return p;
}

struct SimState {
  Pose2 object;
  Pose2 target;
  Vec2 pusher = Vec2::Zero();
  std::shared_ptr<const Shape> shape;
  SimParams params;
  bool clamped = false;  // last step clamped the pusher to the workspace
};

inline SimState make_state(ShapeKind kind, const Pose2& object, const Pose2& target, const Vec2& pusher) {
  auto shape = std::make_shared<const Shape>(make_shape(kind));
  SimState s;
  s.params = default_params(*shape);
  s.shape = std::move(shape);
  s.object = object;
  s.target = target;
  s.pusher = pusher;
  return s;
}

struct ContactState {
  bool in_contact = false;
  Vec2 point = Vec2::Zero();   // world frame
  Vec2 normal = Vec2::Zero();  // outward, world frame
  double distance = 0.0;
};

inline ContactState contact_state(const SimState& s) {
  const auto n = s.shape->nearest(s.object.apply_inverse(s.pusher));
  ContactState c;
  c.distance = n.distance;
  c.in_contact = n.distance <= s.params.delta_contact;
  c.point = s.object.apply(n.point);
  c.normal = s.object.rotate_in(n.normal);
  return c;
}

inline double coverage(const SimState& s) { return coverage_score(s.object, s.target, *s.shape); }

namespace detail {

/// Body twist (vx, vy, omega) produced by contact force f applied at r.
inline Eigen::Vector3d force_twist(const Vec2& r, const Vec2& f, double c) {
  return {f.x(), f.y(), cross(r, f) / (c * c)};
}

inline Vec2 contact_velocity(const Vec2& r, const Eigen::Vector3d& t) {
  return {t.x() - t.z() * r.y(), t.y() + t.z() * r.x()};
}

/// Object body twist when the pusher at body point r with outward normal n
/// moves by w (body frame).
inline Eigen::Vector3d push_twist(const Vec2& r, const Vec2& n, const Vec2& w, double c, double mu) {
  const Vec2 inward = -n;
  const double wn = w.dot(inward);
  if (wn <= 0.0) return Eigen::Vector3d::Zero();
  const double half = std::atan(mu);
  const Vec2 fl = rotate(inward, half);
  const Vec2 fr = rotate(inward, -half);
  const Eigen::Vector3d tl = force_twist(r, fl, c);
  const Eigen::Vector3d tr = force_twist(r, fr, c);
  const Vec2 vl = contact_velocity(r, tl);
  const Vec2 vr = contact_velocity(r, tr);
  const double span = cross(vr, vl);
  const bool inside = cross(vr, w) * span >= 0.0 && cross(w, vl) * span >= 0.0;
  if (inside) {
    // Sticking: contact point moves with the pusher. Invert v = (I + u u^T / c^2) f.
    const Vec2 u(-r.y(), r.x());
    const double den = c * c + u.squaredNorm();
    const Vec2 f = w - u * (u.dot(w) / den);
    return force_twist(r, f, c);
  }
  const bool use_left = vl.normalized().dot(w) > vr.normalized().dot(w);
  const Eigen::Vector3d tb = use_left ? tl : tr;
  const Vec2 vb = use_left ? vl : vr;
  const double kappa = wn / vb.dot(inward);
  return kappa * tb;
}

}  // namespace detail

/// Advances the state by one step with pusher velocity v held for dt.
inline SimState step(const SimState& s, const Vec2& velocity, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("step: dt must be positive");
  if (velocity.norm() > s.params.v_max * (1.0 + 1e-9)) {
    throw std::invalid_argument("step: pusher speed " + std::to_string(velocity.norm()) + " exceeds v_max " +
                                std::to_string(s.params.v_max));
  }
  SimState out = s;
  out.clamped = false;
  const Vec2 total = velocity * dt;
  const double travel = total.norm();
  if (travel == 0.0) return out;
  const int substeps = std::max(1, static_cast<int>(std::ceil(travel / s.params.substep)));
  const Vec2 d = total / substeps;
  const Shape& shape = *s.shape;
  const double c = s.params.limit_c;

  for (int k = 0; k < substeps; ++k) {
    const Vec2 q = out.object.apply_inverse(out.pusher);
    const Vec2 db = out.object.rotate_out(d);
    const auto near = shape.nearest(q);
    Vec2 r;
    Vec2 n;
    double frac = 0.0;
    if (near.distance <= s.params.delta_contact && db.dot(near.normal) < 0.0) {
      r = near.point;
      n = near.normal;
      frac = 1.0;
    } else {
      double t_hit = 2.0;
      for (const auto& part : shape.parts()) {
        if (auto hit = segment_entry(part, q, q + db); hit && hit->t < t_hit) {
          t_hit = hit->t;
          r = q + hit->t * db;
          n = edge_normal(part, hit->edge);
        }
      }
      if (t_hit <= 1.0) frac = 1.0 - t_hit;
    }
    if (frac > 0.0) {
      const Eigen::Vector3d tw = detail::push_twist(r, n, frac * db, c, s.params.mu);
      out.object = compose(out.object, se2_exp(tw.x(), tw.y(), tw.z()));
    }
    out.pusher += d;
    const Vec2 qn = out.object.apply_inverse(out.pusher);
    if (shape.strictly_contains(qn)) out.pusher = out.object.apply(shape.nearest(qn).point);
  }
  const double w = s.params.workspace;
  const Vec2 clamped = out.pusher.cwiseMax(Vec2::Constant(-w)).cwiseMin(Vec2::Constant(w));
  if (clamped != out.pusher) {
    out.clamped = true;
    out.pusher = clamped;
    const Vec2 qn = out.object.apply_inverse(out.pusher);
    if (shape.strictly_contains(qn)) out.pusher = out.object.apply(shape.nearest(qn).point);
  }
  return out;
}

/// Observation vector: object (x, y, cos, sin) and pusher (x, y), both in the
/// target frame.
inline constexpr int kObservationDim = 6;

inline Vector observe(const SimState& s) {
  const Pose2 rel = between(s.target, s.object);
  const Vec2 p = s.target.apply_inverse(s.pusher);
  Vector o(kObservationDim);
  o << rel.x, rel.y, std::cos(rel.theta), std::sin(rel.theta), p.x(), p.y();
  return o;
}

}  // namespace ncprobe
