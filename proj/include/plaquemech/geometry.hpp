#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

namespace plaquemech {

using Point2 = Eigen::Vector2d;
using Polyline = std::vector<Point2>;

namespace geom {

inline double cross(const Point2& a, const Point2& b) { return a.x() * b.y() - a.y() * b.x(); }

/// Shoelace area; positive for counterclockwise loops.
inline double signed_area(const Polyline& poly) {
  double a = 0.0;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) a += cross(poly[i], poly[(i + 1) % n]);
  return 0.5 * a;
}

inline bool is_ccw(const Polyline& poly) { return signed_area(poly) > 0.0; }

/// Area centroid of a closed polygon.
inline Point2 centroid(const Polyline& poly) {
  const double area = signed_area(poly);
  Point2 c = Point2::Zero();
  const std::size_t n = poly.size();
  if (std::abs(area) == 0.0) {
    for (const auto& p : poly) c += p;
    return c / static_cast<double>(n);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % n];
    c += (p + q) * cross(p, q);
  }
  return c / (6.0 * area);
}

inline int orientation(const Point2& a, const Point2& b, const Point2& c) {
  const double v = cross(b - a, c - a);
  return (v > 0.0) - (v < 0.0);
}

inline bool on_segment(const Point2& a, const Point2& b, const Point2& p) {
  return std::min(a.x(), b.x()) <= p.x() && p.x() <= std::max(a.x(), b.x()) &&
         std::min(a.y(), b.y()) <= p.y() && p.y() <= std::max(a.y(), b.y());
}

/// Closed-segment intersection test (touching counts).
inline bool segments_intersect(const Point2& p1, const Point2& p2, const Point2& q1, const Point2& q2) {
  const int o1 = orientation(p1, p2, q1);
  const int o2 = orientation(p1, p2, q2);
  const int o3 = orientation(q1, q2, p1);
  const int o4 = orientation(q1, q2, p2);
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && on_segment(p1, p2, q1)) return true;
  if (o2 == 0 && on_segment(p1, p2, q2)) return true;
  if (o3 == 0 && on_segment(q1, q2, p1)) return true;
  if (o4 == 0 && on_segment(q1, q2, p2)) return true;
  return false;
}

/// True when no two non-adjacent edges of the closed loop intersect.
inline bool is_simple(const Polyline& poly) {
  const std::size_t n = poly.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a1 = poly[i];
    const auto& a2 = poly[(i + 1) % n];
    if ((a2 - a1).squaredNorm() == 0.0) return false;
    for (std::size_t j = i + 1; j < n; ++j) {
      if (j == i + 1 || (i == 0 && j == n - 1)) continue;
      if (segments_intersect(a1, a2, poly[j], poly[(j + 1) % n])) return false;
    }
  }
  return true;
}

/// Strict interior test by crossing number; points on the boundary are outside.
inline bool strictly_inside(const Polyline& poly, const Point2& p) {
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = poly[i];
    const auto& b = poly[(i + 1) % n];
    if (orientation(a, b, p) == 0 && on_segment(a, b, p)) return false;
  }
  bool inside = false;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const auto& pi = poly[i];
    const auto& pj = poly[j];
    if ((pi.y() > p.y()) != (pj.y() > p.y())) {
      const double x = pj.x() + (p.y() - pj.y()) * (pi.x() - pj.x()) / (pi.y() - pj.y());
      if (p.x() < x) inside = !inside;
    }
  }
  return inside;
}

/// Lumen strictly inside the outer loop: every lumen vertex interior and no
/// edge pair touching.
inline bool strictly_contains(const Polyline& outer, const Polyline& inner) {
  for (const auto& p : inner)
    if (!strictly_inside(outer, p)) return false;
  for (std::size_t i = 0; i < inner.size(); ++i)
    for (std::size_t j = 0; j < outer.size(); ++j)
      if (segments_intersect(inner[i], inner[(i + 1) % inner.size()], outer[j],
                             outer[(j + 1) % outer.size()]))
        return false;
  return true;
}

/// Ray parameters t > 0 at which origin + t*dir crosses the closed loop.
/// A ray through a vertex yields one hit (near-coincident hits are merged).
inline std::vector<double> ray_hits(const Point2& origin, const Point2& dir, const Polyline& poly) {
  constexpr double kSlack = 1e-12;
  std::vector<double> hits;
  const std::size_t n = poly.size();
  double scale = 0.0;
  for (const auto& p : poly) scale = std::max(scale, (p - origin).norm());
  for (std::size_t i = 0; i < n; ++i) {
    const Point2 a = poly[i];
    const Point2 e = poly[(i + 1) % n] - a;
    const double denom = cross(dir, e);
    if (denom == 0.0) continue;
    const Point2 w = a - origin;
    const double t = cross(w, e) / denom;
    const double s = cross(w, dir) / denom;
    if (t > 0.0 && s >= -kSlack && s <= 1.0 + kSlack) hits.push_back(t);
  }
  std::sort(hits.begin(), hits.end());
  std::vector<double> merged;
  for (double t : hits)
    if (merged.empty() || t - merged.back() > 1e-9 * std::max(scale, 1.0)) merged.push_back(t);
  return merged;
}

inline Point2 rotate(const Point2& p, double angle_rad) {
  const double c = std::cos(angle_rad);
  const double s = std::sin(angle_rad);
  return {c * p.x() - s * p.y(), s * p.x() + c * p.y()};
}

/// Regular polygon approximating a circle, first vertex at `start_rad`.
inline Polyline circle(const Point2& center, double radius, int n_points, double start_rad = 0.0) {
  Polyline p;
  p.reserve(static_cast<std::size_t>(n_points));
  for (int i = 0; i < n_points; ++i) {
    const double a = start_rad + 2.0 * M_PI * i / n_points;
    p.emplace_back(center.x() + radius * std::cos(a), center.y() + radius * std::sin(a));
  }
  return p;
}

}  // namespace geom
}  // namespace plaquemech
