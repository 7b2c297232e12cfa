// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>

namespace vbg {

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

/// Quadrilateral word box in image pixels, clockwise from the top-left corner
/// (image coordinates, y grows downwards).
using Quad = std::array<Point, 4>;

struct Rect {
  double left = 0.0;
  double top = 0.0;
  double right = 0.0;
  double bottom = 0.0;

  double width() const { return right - left; }
  double height() const { return bottom - top; }
};

inline Quad make_rect_quad(double left, double top, double right, double bottom) {
  return {Point{left, top}, Point{right, top}, Point{right, bottom}, Point{left, bottom}};
}

inline Rect bounding_rect(const Quad& q) {
  Rect r{q[0].x, q[0].y, q[0].x, q[0].y};
  for (const auto& p : q) {
    r.left = std::min(r.left, p.x);
    r.right = std::max(r.right, p.x);
    r.top = std::min(r.top, p.y);
    r.bottom = std::max(r.bottom, p.y);
  }
  return r;
}

/// Shoelace sum; positive for clockwise quads in image coordinates.
inline double signed_area(const Quad& q) {
  double s = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& a = q[i];
    const auto& b = q[(i + 1) % 4];
    s += a.x * b.y - b.x * a.y;
  }
  return 0.5 * s;
}

namespace detail {

inline bool on_segment(const Point& p, const Point& a, const Point& b) {
  const double cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
  const double scale = std::max({1.0, std::abs(b.x - a.x), std::abs(b.y - a.y)});
  if (std::abs(cross) > 1e-9 * scale * scale) return false;
  return p.x >= std::min(a.x, b.x) - 1e-12 && p.x <= std::max(a.x, b.x) + 1e-12 &&
         p.y >= std::min(a.y, b.y) - 1e-12 && p.y <= std::max(a.y, b.y) + 1e-12;
}

}  // namespace detail

/// Boundary-inclusive point-in-polygon test (edges and vertices count as inside).
inline bool point_in_quad(const Point& p, const Quad& q) {
  for (std::size_t i = 0; i < 4; ++i)
    if (detail::on_segment(p, q[i], q[(i + 1) % 4])) return true;
  bool inside = false;
  for (std::size_t i = 0, j = 3; i < 4; j = i++) {
    const auto& a = q[i];
    const auto& b = q[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (p.x < x_cross) inside = !inside;
    }
  }
  return inside;
}

}  // namespace vbg
