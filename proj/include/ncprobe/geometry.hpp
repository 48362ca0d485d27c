#pragma once

// Planar rigid transforms and convex polygon utilities.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace ncprobe {

using Vec2 = Eigen::Vector2d;

/// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  double r = std::remainder(a, 2.0 * std::numbers::pi);
  if (r <= -std::numbers::pi) r += 2.0 * std::numbers::pi;
  return r;
}

inline double cross(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

inline Vec2 rotate(const Vec2& v, double theta) {
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  return {c * v.x() - s * v.y(), s * v.x() + c * v.y()};
}

/// Element of SE(2): rotation by theta followed by translation (x, y).
struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;

  Pose2() = default;
  Pose2(double x_, double y_, double theta_) : x(x_), y(y_), theta(wrap_angle(theta_)) {}

  Vec2 translation() const { return {x, y}; }

  /// Maps a point from this pose's frame into the parent frame.
  Vec2 apply(const Vec2& p) const { return rotate(p, theta) + translation(); }
  /// Maps a parent-frame point into this pose's frame.
  Vec2 apply_inverse(const Vec2& p) const { return rotate(p - translation(), -theta); }
  Vec2 rotate_in(const Vec2& v) const { return rotate(v, theta); }
  Vec2 rotate_out(const Vec2& v) const { return rotate(v, -theta); }

  friend bool operator==(const Pose2&, const Pose2&) = default;
};

inline Pose2 compose(const Pose2& a, const Pose2& b) {
  const Vec2 t = a.apply(b.translation());
  return {t.x(), t.y(), a.theta + b.theta};
}

inline Pose2 inverse(const Pose2& a) {
  const Vec2 t = rotate(-a.translation(), -a.theta);
  return {t.x(), t.y(), -a.theta};
}

/// Pose b expressed in the frame of pose a (a^-1 * b).
inline Pose2 between(const Pose2& a, const Pose2& b) { return compose(inverse(a), b); }

/// Exponential map of a body twist (vx, vy, omega) integrated over unit time.
inline Pose2 se2_exp(double vx, double vy, double omega) {
  if (std::abs(omega) < 1e-12) return {vx, vy, omega};
  const double s = std::sin(omega);
  const double c = std::cos(omega);
  const double a = s / omega;
  const double b = (1.0 - c) / omega;
  return {a * vx - b * vy, b * vx + a * vy, omega};
}

using Polygon = std::vector<Vec2>;

/// Signed shoelace area; positive for counter-clockwise vertex order.
inline double signed_area(const Polygon& p) {
  double a = 0.0;
  for (std::size_t i = 0, n = p.size(); i < n; ++i) a += cross(p[i], p[(i + 1) % n]);
  return 0.5 * a;
}

inline Vec2 polygon_centroid(const Polygon& p) {
  Vec2 c = Vec2::Zero();
  double a = 0.0;
  for (std::size_t i = 0, n = p.size(); i < n; ++i) {
    const double w = cross(p[i], p[(i + 1) % n]);
    a += w;
    c += w * (p[i] + p[(i + 1) % n]);
  }
  return c / (3.0 * a);
}

inline Polygon transform(const Polygon& p, const Pose2& pose) {
  Polygon out;
  out.reserve(p.size());
  for (const auto& v : p) out.push_back(pose.apply(v));
  return out;
}

inline Polygon rectangle(double x0, double y0, double x1, double y1) {
  return {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}};
}

inline bool is_convex_ccw(const Polygon& p) {
  if (p.size() < 3) return false;
  for (std::size_t i = 0, n = p.size(); i < n; ++i) {
    if (cross(p[(i + 1) % n] - p[i], p[(i + 2) % n] - p[(i + 1) % n]) < -1e-12) return false;
  }
  return signed_area(p) > 0.0;
}

/// Outward unit normal of edge i (from vertex i to i+1) of a CCW polygon.
inline Vec2 edge_normal(const Polygon& p, std::size_t i) {
  const Vec2 e = p[(i + 1) % p.size()] - p[i];
  return Vec2(e.y(), -e.x()).normalized();
}

/// Inclusive point-in-convex-polygon test with tolerance `tol` outward.
inline bool contains(const Polygon& p, const Vec2& q, double tol = 0.0) {
  for (std::size_t i = 0, n = p.size(); i < n; ++i) {
    const Vec2 e = p[(i + 1) % n] - p[i];
    if (cross(e, q - p[i]) < -tol * e.norm()) return false;
  }
  return true;
}

/// Strict interior test: q is at least `margin` inside every edge.
inline bool strictly_inside(const Polygon& p, const Vec2& q, double margin) {
  for (std::size_t i = 0, n = p.size(); i < n; ++i) {
    const Vec2 e = p[(i + 1) % n] - p[i];
    if (cross(e, q - p[i]) <= margin * e.norm()) return false;
  }
  return true;
}

inline Vec2 closest_on_segment(const Vec2& a, const Vec2& b, const Vec2& q) {
  const Vec2 ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 == 0.0) return a;
  const double t = std::clamp((q - a).dot(ab) / len2, 0.0, 1.0);
  return a + t * ab;
}

/// Sutherland-Hodgman clipping of `subject` against convex CCW `clip`.
inline Polygon clip_convex(const Polygon& subject, const Polygon& clip) {
  Polygon out = subject;
  for (std::size_t i = 0, n = clip.size(); i < n && !out.empty(); ++i) {
    const Vec2& a = clip[i];
    const Vec2& b = clip[(i + 1) % n];
    const Vec2 ab = b - a;
    Polygon in = std::move(out);
    out.clear();
    for (std::size_t j = 0, m = in.size(); j < m; ++j) {
      const Vec2& p = in[j];
      const Vec2& q = in[(j + 1) % m];
      const double sp = cross(ab, p - a);
      const double sq = cross(ab, q - a);
      if (sp >= 0.0) out.push_back(p);
      if ((sp >= 0.0) != (sq >= 0.0)) {
        const double t = sp / (sp - sq);
        out.push_back(p + t * (q - p));
      }
    }
  }
  return out;
}

inline double intersection_area(const Polygon& a, const Polygon& b) {
  const Polygon c = clip_convex(a, b);
  return c.size() < 3 ? 0.0 : std::abs(signed_area(c));
}

/// First parameter t in [0, 1] at which segment p0 -> p1 enters the convex
/// polygon (Cyrus-Beck), together with the index of the entry edge. Returns
/// nothing when the segment misses or starts inside.
struct SegmentHit {
  double t = 0.0;
  std::size_t edge = 0;
};

inline std::optional<SegmentHit> segment_entry(const Polygon& poly, const Vec2& p0, const Vec2& p1) {
  if (contains(poly, p0)) return std::nullopt;
  const Vec2 d = p1 - p0;
  double t_enter = 0.0;
  double t_exit = 1.0;
  std::optional<std::size_t> enter_edge;
  for (std::size_t i = 0, n = poly.size(); i < n; ++i) {
    const Vec2 nrm = edge_normal(poly, i);
    const double dist = nrm.dot(p0 - poly[i]);  // > 0 outside this edge
    const double rate = nrm.dot(d);
    if (std::abs(rate) < 1e-15) {
      if (dist > 0.0) return std::nullopt;
      continue;
    }
    const double t = -dist / rate;
    if (rate < 0.0) {
      if (!enter_edge || t > t_enter) {
        t_enter = std::max(t, 0.0);
        enter_edge = i;
      }
    } else {
      t_exit = std::min(t_exit, t);
    }
  }
  if (!enter_edge || t_enter > t_exit || t_enter > 1.0) return std::nullopt;
  return SegmentHit{t_enter, *enter_edge};
}

}  // namespace ncprobe
