#include "artemis/scene/generator.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string_view>

#include "artemis/common/angles.hpp"
#include "artemis/common/hash.hpp"
#include "artemis/common/rng.hpp"
#include "artemis/metrics/metrics.hpp"

namespace artemis {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kRoadHalfWidth = 5.0;
constexpr double kRouteHalfWidth = 1.5;
constexpr double kLaneOffset = 3.5;
constexpr double kAgentMarkMargin = 1.0;
constexpr std::size_t kPatchCells = 4;
constexpr std::size_t kPatches = MapGrid::kCells / kPatchCells;
constexpr std::size_t kRawPatchFeatures = 12;

struct Segment {
  double length;
  double curvature;
};

// A curve made of arcs and straights, continuing straight past both ends.
struct Path {
  Pose start;
  std::vector<Segment> segments;

  static Pose advance(Pose p, double l, double k) {
    if (std::abs(k) < 1e-12) {
      return {p.x + l * std::cos(p.heading), p.y + l * std::sin(p.heading), p.heading};
    }
    const double h1 = p.heading + k * l;
    return {p.x + (std::sin(h1) - std::sin(p.heading)) / k, p.y + (std::cos(p.heading) - std::cos(h1)) / k, h1};
  }

  Pose at(double s) const {
    if (s <= 0.0) {
      return advance(start, s, 0.0);
    }
    Pose p = start;
    double remaining = s;
    for (const Segment& seg : segments) {
      const double l = std::min(remaining, seg.length);
      p = advance(p, l, seg.curvature);
      remaining -= l;
      if (remaining <= 0.0) {
        return p;
      }
    }
    return advance(p, remaining, 0.0);
  }

  double curvature_at(double s) const {
    double walked = 0.0;
    for (const Segment& seg : segments) {
      if (s < walked + seg.length) {
        return s < walked ? 0.0 : seg.curvature;
      }
      walked += seg.length;
    }
    return 0.0;
  }

  std::vector<Vec2> sample(double s0, double s1, double spacing) const {
    std::vector<Vec2> pts;
    const auto n = static_cast<std::size_t>(std::ceil((s1 - s0) / spacing));
    for (std::size_t i = 0; i <= n; ++i) {
      const Pose p = at(s0 + static_cast<double>(i) * spacing);
      pts.push_back({p.x, p.y});
    }
    return pts;
  }
};

struct SpeedProfile {
  double v0;
  double accel;
  double distance(double t) const { return v0 * t + 0.5 * accel * t * t; }
  double speed(double t) const { return v0 + accel * t; }
  double peak_speed() const { return std::max(speed(0.0), speed(kHorizon * kStepSeconds)); }
};

constexpr double kHorizonSeconds = kHorizon * kStepSeconds;

SpeedProfile draw_speed(Rng& rng, double v_lo, double v_hi, double a_mag, double v_cap) {
  for (;;) {
    SpeedProfile sp{rng.uniform(v_lo, v_hi), rng.uniform(-a_mag, a_mag)};
    const double v_end = sp.speed(kHorizonSeconds);
    if (v_end >= 1.0 && v_end <= v_cap) {
      return sp;
    }
  }
}

struct Layout {
  Path route;
  std::vector<Path> roads;  // extra road centerlines beyond the route
  SpeedProfile speed;
};

Layout layout_for(SceneKind kind, Behavior behavior, Rng& rng, const KinematicBounds& b) {
  Layout lay;
  const double v_cap = std::min(13.5, b.speed_max);
  switch (kind) {
    case SceneKind::kStraight:
      lay.speed = draw_speed(rng, 4.0, 12.0, 1.0, v_cap);
      break;
    case SceneKind::kLeftTurn:
    case SceneKind::kRightTurn: {
      const double sign = kind == SceneKind::kLeftTurn ? 1.0 : -1.0;
      for (;;) {
        lay.speed = draw_speed(rng, 3.0, 7.0, 0.5, v_cap);
        const double theta = rng.uniform(kPi / 6.0 + 0.02, kPi / 2.0 - 0.02);
        const double k = theta / lay.speed.distance(kHorizonSeconds);
        const double v = lay.speed.peak_speed();
        if (k <= 0.75 * b.kappa_max && v * v * k <= 3.0) {
          lay.route.segments = {{theta / k, sign * k}};
          break;
        }
      }
      break;
    }
    case SceneKind::kIntersection: {
      const double sign = behavior == Behavior::kRight ? -1.0 : 1.0;
      const double approach = rng.uniform(5.0, 25.0);
      const double radius = rng.uniform(7.0, 15.0);
      lay.speed = draw_speed(rng, 3.0, std::min(8.0, std::sqrt(2.8 * radius)), 0.5, std::sqrt(2.8 * radius));
      lay.route.segments = {{approach, 0.0}, {kPi / 2.0 * radius, sign / radius}};
      lay.roads.push_back(Path{});  // the main road keeps going straight
      const Pose corner = lay.route.at(approach + kPi / 2.0 * radius);
      lay.roads.push_back(Path{corner, {}});
      break;
    }
    case SceneKind::kRoundabout: {
      const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
      for (;;) {
        lay.speed = draw_speed(rng, 4.0, 9.0, 0.5, v_cap);
        const double k = rng.uniform(0.03, 0.08);
        const double v = lay.speed.peak_speed();
        if (v * v * k <= 1.5) {
          const double lead = rng.uniform(0.0, 10.0);
          const double arc = rng.uniform(6.0, 14.0);
          lay.route.segments = {{lead, 0.0}, {arc, sign * k}, {arc, -sign * k}};
          break;
        }
      }
      break;
    }
  }
  return lay;
}

double min_distance(const std::vector<Vec2>& polyline, Vec2 p) { return project_onto_polyline(polyline, p).distance; }

SemanticMap rasterize(const std::vector<std::vector<Vec2>>& roads, const std::vector<Vec2>& route,
                      const std::vector<Agent>& agents) {
  SemanticMap map(MapGrid::kCells * MapGrid::kCells, static_cast<std::uint8_t>(CellClass::kNonDrivable));
  for (std::size_t ix = 0; ix < MapGrid::kCells; ++ix) {
    for (std::size_t iy = 0; iy < MapGrid::kCells; ++iy) {
      const Vec2 c = MapGrid::cell_center(ix, iy);
      CellClass cls = CellClass::kNonDrivable;
      for (const auto& road : roads) {
        if (min_distance(road, c) <= kRoadHalfWidth) {
          cls = CellClass::kDrivable;
        }
      }
      const double dr = min_distance(route, c);
      if (dr <= kRoadHalfWidth) {
        cls = CellClass::kDrivable;
      }
      if (dr <= kRouteHalfWidth) {
        cls = CellClass::kRoute;
      }
      for (const Agent& a : agents) {
        if (point_in_box(a.box_at(0.0), c, kAgentMarkMargin)) {
          cls = CellClass::kAgent;
        }
      }
      map[ix * MapGrid::kCells + iy] = static_cast<std::uint8_t>(cls);
    }
  }
  return map;
}

bool inside_map(Vec2 p) { return MapGrid::cell_of(p).has_value(); }

std::vector<Agent> place_agents(Rng& rng, const Path& route, const Trajectory& gt, std::size_t max_agents) {
  std::vector<Agent> agents;
  const std::size_t wanted = rng.index(max_agents + 1);
  for (std::size_t n = 0; n < wanted; ++n) {
    for (int attempt = 0; attempt < 20; ++attempt) {
      const double s = rng.uniform(6.0, 60.0);
      const double lane = static_cast<double>(static_cast<int>(rng.index(3)) - 1) * kLaneOffset;
      const bool oncoming = lane > 0.0 && rng.bernoulli(0.5);
      const bool truck = rng.bernoulli(0.2);
      const double speed = rng.uniform(0.0, 8.0);
      const Pose p = route.at(s);
      const Vec2 normal{-std::sin(p.heading), std::cos(p.heading)};
      Agent a;
      a.position = Vec2{p.x, p.y} + lane * normal;
      a.heading = wrap_to_pi(p.heading + (oncoming ? kPi : 0.0));
      a.velocity = speed * unit_heading(a.heading);
      a.half_extent = truck ? Vec2{4.0, 1.25} : Vec2{2.25, 1.0};
      if (!inside_map(a.position)) {
        continue;
      }
      const bool clashes = std::any_of(agents.begin(), agents.end(),
                                       [&](const Agent& o) { return boxes_overlap(o.box_at(0.0), a.box_at(0.0)); });
      const Agent single[1] = {a};
      if (clashes || no_collision(gt, single) == 0.0 || time_to_collision(gt, single) == 0.0) {
        continue;
      }
      agents.push_back(a);
      break;
    }
  }
  return agents;
}

Behavior default_behavior(SceneKind kind) {
  switch (kind) {
    case SceneKind::kLeftTurn:
      return Behavior::kLeft;
    case SceneKind::kRightTurn:
      return Behavior::kRight;
    default:
      return Behavior::kStraight;
  }
}

}  // namespace

Tensor encode_bev_tokens(const SemanticMap& map, const std::vector<Agent>& agents, std::size_t d_feat) {
  if (map.size() != MapGrid::kCells * MapGrid::kCells) {
    throw DimensionError("semantic map must have " + std::to_string(MapGrid::kCells * MapGrid::kCells) + " cells");
  }
  // The projection is part of the generator version, not of any model.
  Rng rng(mix_seed(fnv1a(kGeneratorVersion), d_feat));
  std::vector<double> proj(kRawPatchFeatures * d_feat);
  const double gain = 1.0 / std::sqrt(static_cast<double>(kRawPatchFeatures));
  for (auto& w : proj) {
    w = gain * rng.normal();
  }

  Tensor tokens(Shape{kBevTokens, d_feat}, 0.0);
  const double patch_span = kPatchCells * MapGrid::kCellSize;
  for (std::size_t px = 0; px < kPatches; ++px) {
    for (std::size_t py = 0; py < kPatches; ++py) {
      std::array<double, kRawPatchFeatures> f{};
      const double x_lo = MapGrid::kXMin + static_cast<double>(px) * patch_span;
      const double y_lo = MapGrid::kYMin + static_cast<double>(py) * patch_span;
      const Vec2 center{x_lo + patch_span / 2.0, y_lo + patch_span / 2.0};
      Vec2 route_sum;
      double route_cells = 0.0;
      for (std::size_t ix = px * kPatchCells; ix < (px + 1) * kPatchCells; ++ix) {
        for (std::size_t iy = py * kPatchCells; iy < (py + 1) * kPatchCells; ++iy) {
          const auto cls = static_cast<std::size_t>(map[ix * MapGrid::kCells + iy]);
          f[cls] += 1.0 / static_cast<double>(kPatchCells * kPatchCells);
          if (cls == static_cast<std::size_t>(CellClass::kRoute)) {
            route_sum = route_sum + (MapGrid::cell_center(ix, iy) - center);
            route_cells += 1.0;
          }
        }
      }
      f[4] = (center.x - 28.0) / 32.0;
      f[5] = center.y / 32.0;
      if (route_cells > 0.0) {
        f[6] = route_sum.x / route_cells / patch_span;
        f[7] = route_sum.y / route_cells / patch_span;
      }
      for (const Agent& a : agents) {
        if (a.position.x >= x_lo && a.position.x < x_lo + patch_span && a.position.y >= y_lo &&
            a.position.y < y_lo + patch_span) {
          f[8] += 1.0;
          f[9] += a.velocity.x / 10.0;
          f[10] += a.velocity.y / 10.0;
        }
      }
      if (f[8] > 0.0) {
        f[9] /= f[8];
        f[10] /= f[8];
      }
      f[11] = 1.0;
      double* row = tokens.data().data() + (px * kPatches + py) * d_feat;
      for (std::size_t r = 0; r < kRawPatchFeatures; ++r) {
        for (std::size_t c = 0; c < d_feat; ++c) {
          row[c] += f[r] * proj[r * d_feat + c];
        }
      }
    }
  }
  return tokens;
}

Scene generate_scene(std::uint64_t seed, SceneKind kind, const GeneratorConfig& cfg, std::optional<Behavior> behavior) {
  if (static_cast<std::size_t>(kind) >= kNumSceneKinds) {
    throw std::invalid_argument("unknown scene kind");
  }
  Rng rng(seed);
  Scene scene;
  scene.seed = seed;
  scene.kind = kind;
  if (kind == SceneKind::kIntersection) {
    scene.behavior = behavior.value_or(rng.bernoulli(0.5) ? Behavior::kLeft : Behavior::kRight);
    if (scene.behavior == Behavior::kStraight) {
      throw std::invalid_argument("intersection scenes turn left or right");
    }
  } else {
    scene.behavior = default_behavior(kind);
  }

  const Layout lay = layout_for(kind, scene.behavior, rng, cfg.bounds);
  for (std::size_t i = 0; i < kHorizon; ++i) {
    const Pose p = lay.route.at(lay.speed.distance(waypoint_time(i)));
    scene.gt[i] = {p.x, p.y, wrap_to_pi(p.heading)};
  }
  scene.route = lay.route.sample(-8.0, 90.0, 1.0);

  scene.ego.command = implied_command(scene.behavior);
  scene.ego.velocity = {lay.speed.v0, 0.0};
  const double k0 = lay.route.curvature_at(0.0);
  scene.ego.acceleration = {lay.speed.accel, lay.speed.v0 * lay.speed.v0 * k0};

  scene.agents = place_agents(rng, lay.route, scene.gt, cfg.max_agents);

  std::vector<std::vector<Vec2>> roads;
  for (const Path& road : lay.roads) {
    roads.push_back(road.sample(-120.0, 120.0, 1.0));
  }
  scene.semantic_map = rasterize(roads, scene.route, scene.agents);
  scene.bev_tokens = encode_bev_tokens(scene.semantic_map, scene.agents, cfg.d_feat);
  return scene;
}

Dataset generate_dataset(std::size_t n, std::uint64_t seed, double mismatch_rate, const GeneratorConfig& cfg) {
  if (n == 0) {
    throw std::invalid_argument("dataset size must be at least 1");
  }
  if (!(mismatch_rate >= 0.0 && mismatch_rate <= 1.0)) {
    throw std::invalid_argument("mismatch rate must lie in [0, 1]");
  }
  Dataset d;
  d.seed = seed;
  d.mismatch_rate = mismatch_rate;
  d.d_feat = cfg.d_feat;
  d.scenes.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(mix_seed(seed, 2 * i));
    const double u = rng.uniform() * 8.0;
    const Behavior behavior = u < 5.0 ? Behavior::kStraight : (u < 7.0 ? Behavior::kLeft : Behavior::kRight);
    SceneKind kind = SceneKind::kStraight;
    switch (behavior) {
      case Behavior::kStraight:
        kind = rng.bernoulli(0.25) ? SceneKind::kRoundabout : SceneKind::kStraight;
        break;
      case Behavior::kLeft:
        kind = rng.bernoulli(0.4) ? SceneKind::kIntersection : SceneKind::kLeftTurn;
        break;
      case Behavior::kRight:
        kind = rng.bernoulli(0.4) ? SceneKind::kIntersection : SceneKind::kRightTurn;
        break;
    }
    const bool mismatch = rng.uniform() < mismatch_rate;
    const std::uint64_t other = rng.index(2);
    Scene scene = generate_scene(mix_seed(seed, 2 * i + 1), kind, cfg, behavior);
    if (mismatch) {
      const Command truth = scene.ego.command;
      Command alternatives[2];
      std::size_t m = 0;
      for (Command c : {Command::kLeft, Command::kStraight, Command::kRight}) {
        if (c != truth) {
          alternatives[m++] = c;
        }
      }
      scene.ego.command = alternatives[other];
      scene.command_mismatch = true;
    }
    d.scenes.push_back(std::move(scene));
  }
  return d;
}

std::string Dataset::config_hash() const {
  return fmt::format("{:016x}",
                     fnv1a(fmt::format("n={};seed={};mismatch_rate={:.17g};d_feat={}", scenes.size(), seed,
                                       mismatch_rate, d_feat)));
}

}  // namespace artemis
