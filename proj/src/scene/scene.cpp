#include "artemis/scene/scene.hpp"

#include <cmath>
#include <stdexcept>

namespace artemis {

Tensor trajectory_tensor(const Trajectory& traj) {
  Tensor t(Shape{kHorizon, 3}, 0.0);
  for (std::size_t i = 0; i < kHorizon; ++i) {
    t[i * 3 + 0] = traj[i].x;
    t[i * 3 + 1] = traj[i].y;
    t[i * 3 + 2] = traj[i].heading;
  }
  return t;
}

Trajectory trajectory_from_tensor(const Tensor& t) {
  if (t.shape() != Shape{kHorizon, 3}) {
    throw DimensionError("trajectory tensor must be [8x3], got " + shape_str(t.shape()));
  }
  Trajectory traj{};
  for (std::size_t i = 0; i < kHorizon; ++i) {
    traj[i] = {t[i * 3 + 0], t[i * 3 + 1], t[i * 3 + 2]};
  }
  return traj;
}

std::string_view to_string(SceneKind kind) {
  switch (kind) {
    case SceneKind::kStraight:
      return "straight";
    case SceneKind::kLeftTurn:
      return "left-turn";
    case SceneKind::kRightTurn:
      return "right-turn";
    case SceneKind::kIntersection:
      return "intersection";
    case SceneKind::kRoundabout:
      return "roundabout";
  }
  return "?";
}

std::string_view to_string(Behavior behavior) {
  switch (behavior) {
    case Behavior::kStraight:
      return "straight";
    case Behavior::kLeft:
      return "left";
    case Behavior::kRight:
      return "right";
  }
  return "?";
}

std::optional<SceneKind> parse_scene_kind(std::string_view s) {
  for (std::size_t k = 0; k < kNumSceneKinds; ++k) {
    if (to_string(static_cast<SceneKind>(k)) == s) {
      return static_cast<SceneKind>(k);
    }
  }
  return std::nullopt;
}

Command implied_command(Behavior behavior) {
  switch (behavior) {
    case Behavior::kLeft:
      return Command::kLeft;
    case Behavior::kRight:
      return Command::kRight;
    case Behavior::kStraight:
      break;
  }
  return Command::kStraight;
}

std::array<double, 8> EgoState::features() const {
  std::array<double, 8> f{};
  f[static_cast<std::size_t>(command)] = 1.0;
  f[4] = velocity.x;
  f[5] = velocity.y;
  f[6] = acceleration.x;
  f[7] = acceleration.y;
  return f;
}

std::optional<std::size_t> MapGrid::cell_of(Vec2 p) {
  const double fx = std::floor((p.x - kXMin) / kCellSize);
  const double fy = std::floor((p.y - kYMin) / kCellSize);
  const auto n = static_cast<double>(kCells);
  if (!(fx >= 0.0 && fx < n && fy >= 0.0 && fy < n)) {
    return std::nullopt;
  }
  return static_cast<std::size_t>(fx) * kCells + static_cast<std::size_t>(fy);
}

Vec2 MapGrid::cell_center(std::size_t ix, std::size_t iy) {
  return {kXMin + (static_cast<double>(ix) + 0.5) * kCellSize, kYMin + (static_cast<double>(iy) + 0.5) * kCellSize};
}

}  // namespace artemis
