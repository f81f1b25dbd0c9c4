#pragma once

#include <span>
#include <vector>

#include "artemis/training/config.hpp"
#include "artemis/training/losses.hpp"

namespace artemis {

/// Stacked inputs and targets for a set of scenes.
struct Batch {
  std::vector<const Scene*> scenes;
  Tensor bev{Shape{1}, 0.0};   // [B x C x d_feat]
  Tensor ego{Shape{1}, 0.0};   // [B x 8]
  Tensor maps{Shape{1}, 0.0};  // [B x 4 x 32 x 32]
  AgentBatch agents;
  std::vector<Command> commands;
  Tensor gt{Shape{1}, 0.0};           // [B x H x 3]
  std::vector<int> semantic_labels;  // per cell, ordered as the semantic head's logits

  std::size_t size() const { return scenes.size(); }
};

Batch make_batch(std::span<const Scene* const> scenes);

struct ModelOutput {
  RolloutOutput rollout;
  Var trajectory;       // final [B x H x 3]: refined, or the planner means without a refiner
  Var semantic_logits;  // [B * C * 16 x 4]
};

/// Planner, refiner and the semantic stub head that stands in for perception.
class Model {
 public:
  static Model create(ParameterSet& params, const ModelConfig& cfg, Rng& rng);
  const ModelConfig& config() const { return cfg_; }
  const Planner& planner() const { return planner_; }
  const Refiner* refiner() const { return refiner_ ? &*refiner_ : nullptr; }

  ModelOutput forward(Graph& g, const Batch& batch) const;
  /// Only the semantic head, for the perception stage.
  Var semantic_logits(Graph& g, const Batch& batch) const;

  /// Parameters trained in the perception stage.
  static bool is_perception_parameter(const Parameter& p);

 private:
  ModelConfig cfg_;
  Planner planner_;
  std::optional<Refiner> refiner_;
  nn::Linear semantic_head_;
};

struct BatchLosses {
  Var total;
  Var l1;
  std::optional<Var> nll;
  std::optional<Var> sem;
};

BatchLosses compute_losses(Graph& g, const ModelOutput& out, const Batch& batch, const LossWeights& w);

}  // namespace artemis
