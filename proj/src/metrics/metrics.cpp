#include "artemis/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace artemis {

namespace {

OrientedBox ego_box(Vec2 center, double heading, const ScoreConfig& cfg) {
  return {center, cfg.ego_half_extent, heading};
}

bool collides_at(Vec2 center, double heading, double t, std::span<const Agent> agents, const ScoreConfig& cfg) {
  const OrientedBox ego = ego_box(center, heading, cfg);
  return std::any_of(agents.begin(), agents.end(),
                     [&](const Agent& a) { return boxes_overlap(ego, a.box_at(t)); });
}

// Origin followed by the 8 waypoints.
std::array<Vec2, kHorizon + 1> path_points(const Trajectory& traj) {
  std::array<Vec2, kHorizon + 1> p{};
  for (std::size_t i = 0; i < kHorizon; ++i) {
    p[i + 1] = {traj[i].x, traj[i].y};
  }
  return p;
}

}  // namespace

double waypoint_time(std::size_t i) { return static_cast<double>(i + 1) * kStepSeconds; }

double no_collision(const Trajectory& traj, std::span<const Agent> agents, const ScoreConfig& cfg) {
  for (std::size_t i = 0; i < kHorizon; ++i) {
    if (collides_at({traj[i].x, traj[i].y}, traj[i].heading, waypoint_time(i), agents, cfg)) {
      return 0.0;
    }
  }
  return 1.0;
}

double drivable_compliance(const Trajectory& traj, const SemanticMap& map) {
  for (const Pose& p : traj) {
    const auto cell = MapGrid::cell_of({p.x, p.y});
    if (!cell || static_cast<CellClass>(map.at(*cell)) == CellClass::kNonDrivable) {
      return 0.0;
    }
  }
  return 1.0;
}

double progress(const Trajectory& traj, const Trajectory& reference, std::span<const Vec2> route) {
  const double origin = project_onto_polyline(route, {0.0, 0.0}).arclength;
  const double ref = project_onto_polyline(route, {reference.back().x, reference.back().y}).arclength - origin;
  if (ref <= 1e-9) {
    return 1.0;
  }
  const double got = project_onto_polyline(route, {traj.back().x, traj.back().y}).arclength - origin;
  return std::clamp(got / ref, 0.0, 1.0);
}

double time_to_collision(const Trajectory& traj, std::span<const Agent> agents, const ScoreConfig& cfg) {
  const auto p = path_points(traj);
  const int steps = static_cast<int>(std::lround(cfg.ttc_threshold / cfg.ttc_step));
  for (std::size_t i = 0; i < kHorizon; ++i) {
    const Vec2 v = (1.0 / kStepSeconds) * (p[i + 1] - p[i]);
    const double t = waypoint_time(i);
    for (int s = 0; s <= steps; ++s) {
      const double tau = s * cfg.ttc_step;
      if (collides_at(p[i + 1] + tau * v, traj[i].heading, t + tau, agents, cfg)) {
        return 0.0;
      }
    }
  }
  return 1.0;
}

std::vector<double> accelerations(const Trajectory& traj) {
  const auto p = path_points(traj);
  std::vector<double> out;
  for (std::size_t i = 1; i + 1 < p.size(); ++i) {
    const Vec2 a = (1.0 / (kStepSeconds * kStepSeconds)) * (p[i + 1] - 2.0 * p[i] + p[i - 1]);
    out.push_back(norm(a));
  }
  return out;
}

std::vector<double> jerks(const Trajectory& traj) {
  const auto p = path_points(traj);
  std::vector<double> out;
  const double dt3 = kStepSeconds * kStepSeconds * kStepSeconds;
  for (std::size_t i = 1; i + 2 < p.size(); ++i) {
    const Vec2 j = (1.0 / dt3) * (p[i + 2] - 3.0 * p[i + 1] + 3.0 * p[i] - p[i - 1]);
    out.push_back(norm(j));
  }
  return out;
}

double comfort(const Trajectory& traj, const ScoreConfig& cfg) {
  for (double a : accelerations(traj)) {
    if (!(a <= cfg.accel_max)) {
      return 0.0;
    }
  }
  for (double j : jerks(traj)) {
    if (!(j <= cfg.jerk_max)) {
      return 0.0;
    }
  }
  return 1.0;
}

double pdms(const SubScores& s, const ScoreConfig& cfg) {
  if (cfg.w_ep <= 0.0 || cfg.w_ttc <= 0.0 || cfg.w_c <= 0.0) {
    throw std::invalid_argument("score weights must be positive");
  }
  const double weighted = (cfg.w_ep * s.ep + cfg.w_ttc * s.ttc + cfg.w_c * s.c) / (cfg.w_ep + cfg.w_ttc + cfg.w_c);
  return s.nc * s.dac * weighted;
}

SubScores score_trajectory(const Trajectory& traj, const Scene& scene, const ScoreConfig& cfg) {
  SubScores s;
  s.nc = no_collision(traj, scene.agents, cfg);
  s.dac = drivable_compliance(traj, scene.semantic_map);
  s.ep = progress(traj, scene.gt, scene.route);
  s.ttc = time_to_collision(traj, scene.agents, cfg);
  s.c = comfort(traj, cfg);
  s.pdms = pdms(s, cfg);
  return s;
}

SubScores mean_scores(std::span<const SubScores> scores) {
  SubScores m;
  if (scores.empty()) {
    return m;
  }
  for (const auto& s : scores) {
    m.nc += s.nc;
    m.dac += s.dac;
    m.ep += s.ep;
    m.ttc += s.ttc;
    m.c += s.c;
    m.pdms += s.pdms;
  }
  const double n = static_cast<double>(scores.size());
  m.nc /= n;
  m.dac /= n;
  m.ep /= n;
  m.ttc /= n;
  m.c /= n;
  m.pdms /= n;
  return m;
}

Trajectory constant_velocity_baseline(const EgoState& ego) {
  Trajectory traj{};
  const double heading = norm(ego.velocity) > 0.0 ? std::atan2(ego.velocity.y, ego.velocity.x) : 0.0;
  for (std::size_t i = 0; i < kHorizon; ++i) {
    const Vec2 p = waypoint_time(i) * ego.velocity;
    traj[i] = {p.x, p.y, heading};
  }
  return traj;
}

}  // namespace artemis
