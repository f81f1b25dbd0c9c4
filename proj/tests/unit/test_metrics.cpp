#include <doctest.h>

#include <cmath>
#include <numbers>

#include "artemis/common/rng.hpp"
#include "artemis/metrics/metrics.hpp"
#include "artemis/scene/generator.hpp"

using namespace artemis;

namespace {

Trajectory straight_line(double speed) {
  Trajectory t{};
  for (std::size_t i = 0; i < kHorizon; ++i) {
    t[i] = {speed * waypoint_time(i), 0.0, 0.0};
  }
  return t;
}

// Axis-aligned overlap by interval intersection (independent of the SAT code).
bool aabb_overlap(Vec2 ca, Vec2 ha, Vec2 cb, Vec2 hb) {
  return std::abs(ca.x - cb.x) < ha.x + hb.x && std::abs(ca.y - cb.y) < ha.y + hb.y;
}

// Ego position at time t by linear interpolation through origin + waypoints.
Vec2 ego_at(const Trajectory& traj, double t) {
  const double u = t / kStepSeconds;
  const auto i = static_cast<std::size_t>(std::floor(u));
  const Vec2 a = i == 0 ? Vec2{} : Vec2{traj[i - 1].x, traj[i - 1].y};
  if (i >= kHorizon) {
    return {traj.back().x, traj.back().y};
  }
  const Vec2 b{traj[i].x, traj[i].y};
  return a + (u - static_cast<double>(i)) * (b - a);
}

}  // namespace

TEST_CASE("no-collision basics") {
  const Trajectory t = straight_line(10.0);
  CHECK(no_collision(t, {}) == 1.0);
  Agent parked;
  parked.position = {t[3].x, t[3].y};
  parked.half_extent = {2.25, 1.0};
  const Agent agents[] = {parked};
  CHECK(no_collision(t, agents) == 0.0);
}

TEST_CASE("grazing pass agrees with a dense 20 Hz oracle") {
  const Trajectory t = straight_line(10.0);
  const ScoreConfig cfg;
  for (double clearance : {0.05, -0.05}) {
    Agent a;
    a.position = {20.0, cfg.ego_half_extent.y + 1.0 + clearance};
    a.half_extent = {2.25, 1.0};
    const Agent agents[] = {a};
    bool dense_hit = false;
    for (int s = 1; s <= 80; ++s) {
      const double time = s / 20.0;
      dense_hit = dense_hit || aabb_overlap(ego_at(t, time), cfg.ego_half_extent, a.position_at(time), a.half_extent);
    }
    INFO("clearance " << clearance);
    CHECK(no_collision(t, agents, cfg) == (dense_hit ? 0.0 : 1.0));
  }
}

TEST_CASE("oriented overlap agrees with point sampling") {
  Rng rng(3);
  int disagreements = 0;
  for (int trial = 0; trial < 400; ++trial) {
    OrientedBox a{{rng.uniform(-3, 3), rng.uniform(-3, 3)}, {rng.uniform(0.5, 2.5), rng.uniform(0.3, 1.5)},
                  rng.uniform(-3.1, 3.1)};
    OrientedBox b{{rng.uniform(-3, 3), rng.uniform(-3, 3)}, {rng.uniform(0.5, 2.5), rng.uniform(0.3, 1.5)},
                  rng.uniform(-3.1, 3.1)};
    // Grid-sample points of a and test containment in b.
    bool sampled = false;
    const Vec2 u = unit_heading(a.heading);
    const Vec2 v{-u.y, u.x};
    for (int i = 0; i <= 60 && !sampled; ++i) {
      for (int j = 0; j <= 60 && !sampled; ++j) {
        const double s = (i / 30.0 - 1.0) * a.half.x;
        const double r = (j / 30.0 - 1.0) * a.half.y;
        sampled = point_in_box(b, a.center + s * u + r * v);
      }
    }
    // Sampling can miss slivers thinner than its spacing, never invent overlap.
    if (sampled) {
      CHECK(boxes_overlap(a, b));
    } else if (boxes_overlap(a, b)) {
      ++disagreements;
    }
  }
  CHECK(disagreements <= 8);
}

TEST_CASE("drivable compliance") {
  GeneratorConfig cfg;
  cfg.max_agents = 0;
  const Scene s = generate_scene(3, SceneKind::kStraight, cfg);
  CHECK(drivable_compliance(s.gt, s.semantic_map) == 1.0);

  SemanticMap blocked = s.semantic_map;
  const auto cell = MapGrid::cell_of({s.gt.back().x, s.gt.back().y});
  REQUIRE(cell.has_value());
  blocked[*cell] = static_cast<std::uint8_t>(CellClass::kNonDrivable);
  CHECK(drivable_compliance(s.gt, blocked) == 0.0);

  Trajectory off = s.gt;
  off.back().x = 61.0;
  CHECK(drivable_compliance(off, s.semantic_map) == 0.0);

  // Half-open cells: x = -4 + 2 belongs to cell column 1, not 0.
  CHECK(MapGrid::cell_of({-2.0, -32.0}) == std::optional<std::size_t>(1 * MapGrid::kCells + 0));
  CHECK(MapGrid::cell_of({-2.0 - 1e-12, -32.0}) == std::optional<std::size_t>(0));
  CHECK_FALSE(MapGrid::cell_of({60.0, 0.0}).has_value());
  CHECK(MapGrid::cell_of({-4.0, -32.0}) == std::optional<std::size_t>(0));
  CHECK_FALSE(MapGrid::cell_of({0.0, 32.0}).has_value());
}

TEST_CASE("ego progress") {
  const Scene s = generate_scene(8, SceneKind::kLeftTurn);
  CHECK(progress(s.gt, s.gt, s.route) == 1.0);
  Trajectory still{};
  CHECK(progress(still, s.gt, s.route) == 0.0);

  // Dense walk along the route to half of the reference arclength.
  double total = 0.0;
  {
    double best = 1e18;
    double walked = 0.0;
    for (std::size_t i = 0; i + 1 < s.route.size(); ++i) {
      const Vec2 a = s.route[i];
      const Vec2 b = s.route[i + 1];
      for (int k = 0; k < 200; ++k) {
        const Vec2 p = a + (k / 200.0) * (b - a);
        const double d = norm(p - Vec2{s.gt.back().x, s.gt.back().y});
        if (d < best) {
          best = d;
          total = walked + norm(p - a);
        }
      }
      walked += norm(b - a);
    }
  }
  const double origin_s = 8.0;  // route starts 8 m behind the ego
  const double target = origin_s + (total - origin_s) / 2.0;
  Vec2 half;
  double walked = 0.0;
  for (std::size_t i = 0; i + 1 < s.route.size(); ++i) {
    const double len = norm(s.route[i + 1] - s.route[i]);
    if (walked + len >= target) {
      half = s.route[i] + ((target - walked) / len) * (s.route[i + 1] - s.route[i]);
      break;
    }
    walked += len;
  }
  Trajectory halfway = s.gt;
  halfway.back() = {half.x, half.y, 0.0};
  CHECK(std::abs(progress(halfway, s.gt, s.route) - 0.5) <= 0.02);
}

TEST_CASE("time to collision") {
  const Trajectory t = straight_line(10.0);
  CHECK(time_to_collision(t, {}) == 1.0);

  // Ego reaches x = 5 at 10 m/s and then holds; a lead car 0.5 m ahead moves at
  // 5 m/s, so projecting the ego's velocity closes the gap in 0.1 s < 1 s.
  Trajectory brake{};
  for (auto& p : brake) {
    p = {5.0, 0.0, 0.0};
  }
  Agent lead;
  lead.half_extent = {2.25, 1.0};
  lead.velocity = {5.0, 0.0};
  lead.position = {5.0 + 2.25 + 0.5 + 2.25 - 5.0 * 0.5, 0.0};
  const Agent agents[] = {lead};
  CHECK(no_collision(brake, agents) == 1.0);
  CHECK(time_to_collision(brake, agents) == 0.0);
}

TEST_CASE("collision implies ttc failure and zero pdms") {
  const Dataset d = generate_dataset(200, 21, 0.0);
  Rng rng(4);
  int colliding = 0;
  for (const auto& s : d.scenes) {
    Trajectory t = s.gt;
    Agent blocker;
    const std::size_t i = rng.index(kHorizon);
    blocker.position = {t[i].x, t[i].y};
    blocker.half_extent = {2.25, 1.0};
    std::vector<Agent> agents = s.agents;
    agents.push_back(blocker);
    Scene hit = s;
    hit.agents = agents;
    const SubScores sc = score_trajectory(t, hit);
    if (sc.nc == 0.0) {
      ++colliding;
      CHECK(sc.ttc == 0.0);
      CHECK(sc.pdms == 0.0);
    }
  }
  CHECK(colliding == 200);
}

TEST_CASE("comfort") {
  CHECK(comfort(straight_line(8.0)) == 1.0);
  Trajectory bumped = straight_line(8.0);
  bumped[3].y += 3.0;
  const auto acc = accelerations(bumped);
  double worst = 0.0;
  for (double a : acc) {
    worst = std::max(worst, a);
  }
  CHECK(worst == doctest::Approx(2.0 * 3.0 / 0.25));
  CHECK(comfort(bumped) == 0.0);
}

TEST_CASE("pdms aggregation") {
  CHECK(pdms({1, 1, 1, 1, 1, 0}) == 1.0);
  CHECK(pdms({0, 1, 1, 1, 1, 0}) == 0.0);
  CHECK(std::abs(pdms({1, 1, 0.8, 1, 1, 0}) - 0.9167) <= 1e-4);

  Rng rng(6);
  for (int trial = 0; trial < 500; ++trial) {
    SubScores s{rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform(), 0};
    const double base = pdms(s);
    CHECK(base >= 0.0);
    CHECK(base <= 1.0);
    double* fields[] = {&s.nc, &s.dac, &s.ep, &s.ttc, &s.c};
    double* f = fields[rng.index(5)];
    *f = std::min(1.0, *f + rng.uniform(0.0, 0.5));
    CHECK(pdms(s) >= base);
  }
}

TEST_CASE("ground truth of compliant scenes scores perfectly") {
  const Dataset d = generate_dataset(300, 13, 0.0);
  for (const auto& s : d.scenes) {
    const SubScores sc = score_trajectory(s.gt, s);
    INFO("seed " << s.seed << " kind " << to_string(s.kind));
    CHECK(sc.nc == 1.0);
    CHECK(sc.dac == 1.0);
    CHECK(sc.c == 1.0);
    CHECK(sc.ttc == 1.0);
    CHECK(sc.ep >= 0.99);
  }
}

TEST_CASE("constant velocity baseline") {
  EgoState ego;
  ego.velocity = {6.0, 0.0};
  const Trajectory t = constant_velocity_baseline(ego);
  CHECK(t.back().x == doctest::Approx(24.0));
  CHECK(t.back().y == 0.0);
  CHECK(comfort(t) == 1.0);
}
