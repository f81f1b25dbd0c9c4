#pragma once

#include <span>
#include <vector>

#include "artemis/scene/scene.hpp"

namespace artemis {

struct ScoreConfig {
  double ttc_threshold = 1.0;  // s
  double ttc_step = 0.1;       // s, projection sampling
  double accel_max = 4.0;      // m/s^2
  double jerk_max = 8.37;      // m/s^3
  double w_ep = 5.0;
  double w_ttc = 5.0;
  double w_c = 2.0;
  Vec2 ego_half_extent{2.25, 1.0};
};

struct SubScores {
  double nc = 0.0;
  double dac = 0.0;
  double ep = 0.0;
  double ttc = 0.0;
  double c = 0.0;
  double pdms = 0.0;
};

/// Waypoint i is reached at t = (i + 1) * 0.5 s; the ego starts at the origin.
double waypoint_time(std::size_t i);

double no_collision(const Trajectory& traj, std::span<const Agent> agents, const ScoreConfig& cfg = {});
double drivable_compliance(const Trajectory& traj, const SemanticMap& map);
/// Route progress of the final waypoint relative to the reference trajectory's.
double progress(const Trajectory& traj, const Trajectory& reference, std::span<const Vec2> route);
double time_to_collision(const Trajectory& traj, std::span<const Agent> agents, const ScoreConfig& cfg = {});
double comfort(const Trajectory& traj, const ScoreConfig& cfg = {});
double pdms(const SubScores& s, const ScoreConfig& cfg = {});

SubScores score_trajectory(const Trajectory& traj, const Scene& scene, const ScoreConfig& cfg = {});
SubScores mean_scores(std::span<const SubScores> scores);

/// Extrapolates the ego's current velocity over the horizon.
Trajectory constant_velocity_baseline(const EgoState& ego);

/// Finite-difference accelerations (7) and jerks (6) of origin + 8 waypoints.
std::vector<double> accelerations(const Trajectory& traj);
std::vector<double> jerks(const Trajectory& traj);

}  // namespace artemis
