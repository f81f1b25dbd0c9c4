#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "artemis/common/version.hpp"
#include "artemis/metrics/metrics.hpp"
#include "artemis/planner/planner.hpp"
#include "artemis/refiner/refiner.hpp"
#include "artemis/training/losses.hpp"

namespace artemis {

struct ModelConfig {
  PlannerConfig planner;
  RefinerConfig refiner;
  bool use_refiner = true;
  std::size_t semantic_classes = 4;

  void validate() const;
};

struct Ablations {
  bool no_moe = false;
  bool no_ar = false;
  bool no_refine = false;
};

struct ModelSection {
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t encoder_layers = 2;
  std::size_t d_feat = 32;
  std::size_t n_private = 5;
  std::size_t n_shared = 1;
  std::size_t k = 2;
  std::size_t refine_layers = 2;
};

struct TrainSection {
  double lr = 2e-4;
  double weight_decay = 1e-4;
  std::size_t batch_size = 32;
  std::size_t epochs = 50;        // end-to-end epochs
  std::size_t stage1_epochs = 2;  // perception-only epochs before them
  std::uint64_t seed = 7;
  RoutingMode routing = RoutingMode::kIntrinsic;
  std::size_t fixed_expert = 0;
  Ablations ablations;
  LossWeights loss;
  double grad_clip = 5.0;
};

struct DataSection {
  std::size_t n = 512;
  std::uint64_t seed = 7;
  double mismatch_rate = 0.0;
  std::size_t val_n = 128;
  std::uint64_t val_seed = 1007;
};

/// Everything a run depends on. JSON sections: model, train, data, score.
struct RunConfig {
  ModelSection model;
  TrainSection train;
  DataSection data;
  ScoreConfig score;

  void validate() const;
  ModelConfig model_config() const;
};

/// Parses JSON text; unknown keys and ill-typed values raise ConfigError.
RunConfig parse_run_config(const std::string& json_text);
/// Canonical JSON (sorted keys, every field present).
std::string dump_run_config(const RunConfig& cfg, int indent = 2);
/// FNV-1a over the canonical compact dump, 16 hex digits.
std::string config_hash(const RunConfig& cfg);

std::string to_string(RoutingMode m, std::size_t fixed_expert);
/// "intrinsic", "command" or "fixed-expert-<e>".
void parse_routing_mode(const std::string& s, RoutingMode& mode, std::size_t& fixed_expert);
/// Applies one named ablation: no_moe, no_ar or no_refine.
void apply_ablation(Ablations& a, const std::string& name);

}  // namespace artemis
