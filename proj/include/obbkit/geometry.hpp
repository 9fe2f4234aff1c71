// Copyright (c) 2026 obbkit contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "obbkit/errors.hpp"

namespace obbkit {

inline constexpr double kPi = std::numbers::pi;

// Intersection areas below this (px^2) are treated as empty; stabilizes
// touching-edge cases.
inline constexpr double kDegenerateArea = 1e-9;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(Vec2 a, double s) { return {a.x * s, a.y * s}; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }

/// Oriented box in pixel units. `theta` is in radians, measured CCW from the
/// +x axis to the w edge, canonically in [-pi/2, pi/2).
struct Obb {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;
  double theta = 0.0;

  double area() const { return w * h; }
};

/// Convex polygon; vertices in counter-clockwise order, signed area > 0.
/// An empty vertex list denotes the empty polygon.
struct ConvexPolygon {
  std::vector<Vec2> vertices;

  bool empty() const { return vertices.empty(); }
  std::size_t size() const { return vertices.size(); }
};

inline bool is_valid(const Obb& b) {
  return std::isfinite(b.cx) && std::isfinite(b.cy) && std::isfinite(b.w) &&
         std::isfinite(b.h) && std::isfinite(b.theta) && b.w > 0.0 && b.h > 0.0;
}

/// Reduces theta to [-pi/2, pi/2). A rectangle maps to itself under rotation
/// by pi, so the returned box covers the identical point set.
inline Obb canonicalize(const Obb& b) {
  if (!is_valid(b)) {
    throw InvalidBoxError("canonicalize: non-finite field or non-positive extent");
  }
  double t = std::remainder(b.theta, kPi);  // lands in [-pi/2, pi/2]
  if (t >= kPi / 2.0) t -= kPi;
  return {b.cx, b.cy, b.w, b.h, t};
}

/// Four corners in CCW order, starting from the local (-w/2, -h/2) corner.
inline ConvexPolygon corners(const Obb& b) {
  if (!is_valid(b)) throw InvalidBoxError("corners: invalid box");
  const double c = std::cos(b.theta);
  const double s = std::sin(b.theta);
  const double hw = 0.5 * b.w;
  const double hh = 0.5 * b.h;
  auto at = [&](double x, double y) -> Vec2 {
    return {b.cx + x * c - y * s, b.cy + x * s + y * c};
  };
  return {{at(-hw, -hh), at(hw, -hh), at(hw, hh), at(-hw, hh)}};
}

/// Shoelace area, positive for CCW vertex order.
inline double signed_area(const ConvexPolygon& p) {
  const auto& v = p.vertices;
  const std::size_t n = v.size();
  if (n < 3) return 0.0;
  double a = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    a += cross(v[i], v[(i + 1) % n]);
  }
  return 0.5 * a;
}

inline double polygon_area(const ConvexPolygon& p) { return std::abs(signed_area(p)); }

/// Boundary-inclusive point-in-convex-polygon test (CCW polygon).
inline bool contains(const ConvexPolygon& poly, Vec2 p, double eps = 1e-9) {
  const auto& v = poly.vertices;
  const std::size_t n = v.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    if (cross(v[(i + 1) % n] - v[i], p - v[i]) < -eps) return false;
  }
  return true;
}

/// Sutherland-Hodgman clip of `subject` against the convex CCW `clip`.
/// Returns the empty polygon when the clip result is empty or its area falls
/// below kDegenerateArea.
inline ConvexPolygon intersect_convex(const ConvexPolygon& subject,
                                      const ConvexPolygon& clip) {
  if (subject.size() < 3 || clip.size() < 3) return {};
  std::vector<Vec2> out = subject.vertices;
  std::vector<Vec2> in;
  const std::size_t nc = clip.vertices.size();
  for (std::size_t i = 0; i < nc && !out.empty(); ++i) {
    const Vec2 p = clip.vertices[i];
    const Vec2 edge = clip.vertices[(i + 1) % nc] - p;
    in.swap(out);
    out.clear();
    const std::size_t m = in.size();
    for (std::size_t j = 0; j < m; ++j) {
      const Vec2 s = in[j];
      const Vec2 e = in[(j + 1) % m];
      const double ds = cross(edge, s - p);
      const double de = cross(edge, e - p);
      // Points on the clip edge count as inside, so clipping a polygon
      // against itself reproduces it exactly.
      if (ds >= 0.0) out.push_back(s);
      if ((ds >= 0.0) != (de >= 0.0)) {
        out.push_back(s + (e - s) * (ds / (ds - de)));
      }
    }
  }
  // Clipping can emit coincident consecutive vertices; drop them.
  std::vector<Vec2> dedup;
  dedup.reserve(out.size());
  for (const Vec2& v : out) {
    if (dedup.empty() || dot(v - dedup.back(), v - dedup.back()) > 1e-20) {
      dedup.push_back(v);
    }
  }
  while (dedup.size() > 1) {
    const Vec2 d = dedup.front() - dedup.back();
    if (dot(d, d) > 1e-20) break;
    dedup.pop_back();
  }
  ConvexPolygon result{std::move(dedup)};
  if (result.size() < 3 || polygon_area(result) < kDegenerateArea) return {};
  return result;
}

/// Area-overlap ratio in [0, 1]; symmetric, 0 for disjoint boxes. Union is
/// computed from the polygon areas so identical boxes give exactly 1.
inline double rotated_iou(const Obb& a, const Obb& b) {
  const ConvexPolygon pa = corners(a);
  const ConvexPolygon pb = corners(b);
  const double inter = polygon_area(intersect_convex(pa, pb));
  if (inter <= 0.0) return 0.0;
  const double uni = polygon_area(pa) + polygon_area(pb) - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

/// Convex hull by monotone chain; CCW order, collinear points dropped.
/// Degenerate inputs yield fewer than 3 vertices.
inline std::vector<Vec2> convex_hull(std::span<const Vec2> points) {
  std::vector<Vec2> pts(points.begin(), points.end());
  std::sort(pts.begin(), pts.end(), [](Vec2 a, Vec2 b) {
    return a.x < b.x || (a.x == b.x && a.y < b.y);
  });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](Vec2 a, Vec2 b) { return a.x == b.x && a.y == b.y; }),
            pts.end());
  const std::size_t n = pts.size();
  if (n < 3) return pts;
  std::vector<Vec2> hull(2 * n);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {  // lower chain
    while (k >= 2 && cross(hull[k - 1] - hull[k - 2], pts[i] - hull[k - 2]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  for (std::size_t i = n - 1, lo = k + 1; i-- > 0;) {  // upper chain
    while (k >= lo && cross(hull[k - 1] - hull[k - 2], pts[i] - hull[k - 2]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

/// Smallest-area enclosing rectangle of a point set. One edge of the result
/// is collinear with a convex-hull edge; ties between equal-area candidates
/// break toward the smaller |theta| of the canonical form.
inline Obb min_area_rect(std::span<const Vec2> points) {
  const std::vector<Vec2> hull = convex_hull(points);
  if (hull.size() < 3) {
    throw DegenerateInputError("min_area_rect: need >= 3 non-collinear points");
  }
  const std::size_t n = hull.size();
  Obb best{};
  double best_area = std::numeric_limits<double>::infinity();
  bool have = false;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 d = hull[(i + 1) % n] - hull[i];
    const double len = std::hypot(d.x, d.y);
    if (len < 1e-12) continue;
    const Vec2 u{d.x / len, d.y / len};   // edge direction
    const Vec2 v{-u.y, u.x};              // outward-left normal
    double umin = std::numeric_limits<double>::infinity(), umax = -umin;
    double vmin = umin, vmax = -umin;
    for (const Vec2& p : hull) {
      const double pu = dot(p, u);
      const double pv = dot(p, v);
      umin = std::min(umin, pu);
      umax = std::max(umax, pu);
      vmin = std::min(vmin, pv);
      vmax = std::max(vmax, pv);
    }
    const double w = umax - umin;
    const double h = vmax - vmin;
    const double area = w * h;
    const double cu = 0.5 * (umin + umax);
    const double cv = 0.5 * (vmin + vmax);
    const Obb cand = canonicalize(
        {cu * u.x + cv * v.x, cu * u.y + cv * v.y, w, h, std::atan2(u.y, u.x)});
    const double tol = 1e-9 * std::max(1.0, std::min(area, best_area));
    if (!have || area < best_area - tol) {
      best = cand;
      best_area = area;
      have = true;
    } else if (area <= best_area + tol && std::abs(cand.theta) < std::abs(best.theta)) {
      best = cand;
      best_area = std::min(best_area, area);
    }
  }
  return best;
}

}  // namespace obbkit
