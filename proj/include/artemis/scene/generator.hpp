#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "artemis/scene/scene.hpp"

namespace artemis {

inline constexpr const char* kGeneratorVersion = "artemis-scenes-1";
inline constexpr std::size_t kBevTokens = 64;  // 8 x 8 patches of 4 x 4 cells
inline constexpr std::size_t kDefaultFeatureDim = 32;

struct GeneratorConfig {
  std::size_t d_feat = kDefaultFeatureDim;
  KinematicBounds bounds;
  std::size_t max_agents = 4;
};

/// One synthetic scene. `behavior` picks the turn direction for intersections and is
/// ignored for other kinds; the command always matches the behavior here.
Scene generate_scene(std::uint64_t seed, SceneKind kind, const GeneratorConfig& cfg = {},
                     std::optional<Behavior> behavior = std::nullopt);

/// Pooled patch statistics of the map and agents passed through a fixed projection
/// seeded by the generator version. [kBevTokens x d_feat].
Tensor encode_bev_tokens(const SemanticMap& map, const std::vector<Agent>& agents, std::size_t d_feat);

struct Dataset {
  std::string version = kGeneratorVersion;
  std::uint64_t seed = 0;
  std::size_t d_feat = kDefaultFeatureDim;
  double mismatch_rate = 0.0;
  std::vector<Scene> scenes;

  /// FNV-1a over the generation parameters (n, seed, mismatch_rate, d_feat).
  std::string config_hash() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Behaviors are drawn straight:left:right = 5:2:1, the kind is drawn given the
/// behavior, and each scene's command is replaced by a different one with
/// probability `mismatch_rate`.
Dataset generate_dataset(std::size_t n, std::uint64_t seed, double mismatch_rate, const GeneratorConfig& cfg = {});

}  // namespace artemis
