#include "artemis/common/geometry.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace artemis {

namespace {

// Half-length of the box's shadow on `axis` (unit vector).
double projected_radius(const OrientedBox& b, Vec2 axis) {
  const Vec2 u = unit_heading(b.heading);
  const Vec2 v{-u.y, u.x};
  return b.half.x * std::abs(dot(u, axis)) + b.half.y * std::abs(dot(v, axis));
}

}  // namespace

bool boxes_overlap(const OrientedBox& a, const OrientedBox& b) {
  const Vec2 d = b.center - a.center;
  const Vec2 ua = unit_heading(a.heading);
  const Vec2 ub = unit_heading(b.heading);
  const Vec2 axes[4] = {ua, {-ua.y, ua.x}, ub, {-ub.y, ub.x}};
  for (const Vec2& axis : axes) {
    if (std::abs(dot(d, axis)) >= projected_radius(a, axis) + projected_radius(b, axis)) {
      return false;
    }
  }
  return true;
}

bool point_in_box(const OrientedBox& box, Vec2 p, double margin) {
  const Vec2 d = p - box.center;
  const Vec2 u = unit_heading(box.heading);
  const Vec2 v{-u.y, u.x};
  return std::abs(dot(d, u)) <= box.half.x + margin && std::abs(dot(d, v)) <= box.half.y + margin;
}

Projection project_onto_polyline(std::span<const Vec2> polyline, Vec2 p) {
  if (polyline.size() < 2) {
    throw std::invalid_argument("polyline needs at least two vertices");
  }
  Projection best{0.0, std::numeric_limits<double>::infinity()};
  double walked = 0.0;
  for (std::size_t i = 0; i + 1 < polyline.size(); ++i) {
    const Vec2 a = polyline[i];
    const Vec2 seg = polyline[i + 1] - a;
    const double len2 = dot(seg, seg);
    const double len = std::sqrt(len2);
    double u = len2 > 0.0 ? dot(p - a, seg) / len2 : 0.0;
    u = std::clamp(u, 0.0, 1.0);
    const double dist = norm(p - (a + u * seg));
    if (dist < best.distance) {
      best = {walked + u * len, dist};
    }
    walked += len;
  }
  return best;
}

}  // namespace artemis
