#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "artemis/common/geometry.hpp"
#include "artemis/tensor/tensor.hpp"

namespace artemis {

inline constexpr std::size_t kHorizon = 8;
inline constexpr double kStepSeconds = 0.5;

struct Pose {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
  friend bool operator==(const Pose&, const Pose&) = default;
};

using Trajectory = std::array<Pose, kHorizon>;

/// [8 x 3] tensor <-> trajectory.
Tensor trajectory_tensor(const Trajectory& traj);
Trajectory trajectory_from_tensor(const Tensor& t);

enum class SceneKind : std::uint8_t { kStraight, kLeftTurn, kRightTurn, kIntersection, kRoundabout };
enum class Behavior : std::uint8_t { kStraight, kLeft, kRight };
enum class Command : std::uint8_t { kLeft, kStraight, kRight, kUnknown };
enum class CellClass : std::uint8_t { kDrivable, kNonDrivable, kAgent, kRoute };

inline constexpr std::size_t kNumSceneKinds = 5;
inline constexpr std::size_t kNumCommands = 4;
inline constexpr std::size_t kNumCellClasses = 4;

std::string_view to_string(SceneKind kind);
std::string_view to_string(Behavior behavior);
std::optional<SceneKind> parse_scene_kind(std::string_view s);
/// The command a driver following `behavior` would be given.
Command implied_command(Behavior behavior);

struct EgoState {
  Command command = Command::kStraight;
  Vec2 velocity;
  Vec2 acceleration;

  /// [command one-hot (4), velocity (2), acceleration (2)]
  std::array<double, 8> features() const;
  friend bool operator==(const EgoState&, const EgoState&) = default;
};

struct Agent {
  Vec2 position;
  Vec2 velocity;
  Vec2 half_extent;  // along / across the heading
  double heading = 0.0;

  Vec2 position_at(double t) const { return position + t * velocity; }
  OrientedBox box_at(double t) const { return {position_at(t), half_extent, heading}; }
  friend bool operator==(const Agent&, const Agent&) = default;
};

/// Square ego-frame raster: x (forward) in [x_min, x_min + extent), y in
/// [y_min, y_min + extent). Cell (ix, iy) is stored at ix * cells + iy and
/// owns [lo, lo + cell) on both axes.
struct MapGrid {
  static constexpr std::size_t kCells = 32;
  static constexpr double kCellSize = 2.0;
  static constexpr double kXMin = -4.0;
  static constexpr double kYMin = -32.0;

  /// Cell index containing p, or nullopt outside the map.
  static std::optional<std::size_t> cell_of(Vec2 p);
  static Vec2 cell_center(std::size_t ix, std::size_t iy);
};

using SemanticMap = std::vector<std::uint8_t>;  // kCells * kCells CellClass values

/// Bounds shared by the generator, the refiner and the comfort metric.
struct KinematicBounds {
  double kappa_max = 0.2;  // 1/m
  double accel_max = 4.0;  // m/s^2
  double speed_max = 15.0; // m/s
};

struct Scene {
  std::uint64_t seed = 0;
  SceneKind kind = SceneKind::kStraight;
  Behavior behavior = Behavior::kStraight;
  bool command_mismatch = false;
  EgoState ego;
  Tensor bev_tokens{Shape{1}, 0.0};  // [c_bev x d_feat]
  SemanticMap semantic_map;
  std::vector<Agent> agents;
  std::vector<Vec2> route;
  Trajectory gt;

  friend bool operator==(const Scene&, const Scene&) = default;
};

}  // namespace artemis
