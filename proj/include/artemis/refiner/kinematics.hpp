#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "artemis/scene/scene.hpp"
#include "artemis/tensor/graph.hpp"

namespace artemis {

/// Soft projection onto the kinematic limits: a fixed number of damped Newton
/// iterations on the penalty objective. Only x and y move; headings pass through.
struct ProjectionConfig {
  std::size_t iterations = 20;
  double step = 1.0;              // initial step along the Newton direction
  std::size_t max_halvings = 40;  // backtracking keeps the objective non-increasing
  double kappa_max = 0.2;
  double accel_max = 4.0;
  double dt = kStepSeconds;
  double speed_eps = 1e-6;  // keeps curvature finite for a standing ego
};

struct ConstraintWeights {
  double smooth = 0.0;
  double curv = 0.0;
  double accel = 0.0;
};

using PointBlock = std::array<double, 2 * kHorizon>;  // x0, y0, x1, y1, ...

/// Curvature and acceleration magnitude at interior waypoint i (1..H-2), central differences.
double point_curvature(const PointBlock& p, std::size_t i, double dt, double speed_eps = 1e-6);
double point_acceleration(const PointBlock& p, std::size_t i, double dt);

/// Unweighted penalty terms: smoothness, curvature, acceleration, proximity to `anchor`.
std::array<double, 4> projection_terms(const PointBlock& p, const PointBlock& anchor, const ProjectionConfig& cfg);
double projection_objective(const PointBlock& p, const PointBlock& anchor, const ConstraintWeights& w,
                            const ProjectionConfig& cfg);

struct ProjectionTrace {
  std::vector<double> objective;  // before the first and after every iteration
  std::vector<double> steps;      // accepted step per iteration, 0 when none was found
};

PointBlock project_points(const PointBlock& start, const ConstraintWeights& w, const ProjectionConfig& cfg,
                          ProjectionTrace* trace = nullptr);

/// Differentiable projection. y [B x H x 3], weights [3] = (smooth, curv, accel), all positive.
/// Backward differentiates the optimality condition at the returned point.
Var kinematic_project(Var y, Var weights, const ProjectionConfig& cfg);

}  // namespace artemis
