#pragma once

#include <cmath>
#include <span>
#include <vector>

namespace artemis {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(const Vec2&, const Vec2&) = default;
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }
inline Vec2 unit_heading(double heading) { return {std::cos(heading), std::sin(heading)}; }

/// Rectangle centered at `center`, rotated by `heading`, with half side lengths
/// `half.x` along the heading and `half.y` across it.
struct OrientedBox {
  Vec2 center;
  Vec2 half;
  double heading = 0.0;
};

/// Separating-axis test. Touching boxes (zero-width contact) do not overlap.
bool boxes_overlap(const OrientedBox& a, const OrientedBox& b);

/// True if `p` lies inside `box` grown by `margin` on every side.
bool point_in_box(const OrientedBox& box, Vec2 p, double margin = 0.0);

struct Projection {
  double arclength = 0.0;  // along the polyline from its first vertex
  double distance = 0.0;   // unsigned distance to the closest point
};

/// Closest point on a polyline (at least two vertices). Ties go to the earliest segment.
Projection project_onto_polyline(std::span<const Vec2> polyline, Vec2 p);

}  // namespace artemis
