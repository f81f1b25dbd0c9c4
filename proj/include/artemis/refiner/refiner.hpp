#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "artemis/refiner/kinematics.hpp"
#include "artemis/scene/scene.hpp"
#include "artemis/tensor/nn.hpp"

namespace artemis {

/// Metres per unit in the refiner's normalized point coordinates.
inline constexpr double kPointUnit = 10.0;
inline constexpr std::size_t kAgentFeatures = 8;

struct RefinerConfig {
  std::size_t d_model = 64;  // width of the planning queries it attends to
  std::size_t heads = 4;
  std::size_t d_sem = 32;
  std::size_t conv_channels = 8;  // second conv layer doubles this
  std::size_t gru_hidden = 32;
  std::size_t layers = 2;
  ProjectionConfig projection;
  // Constraint weight = scale * softplus(raw); raw starts where softplus is 1.
  std::array<double, 3> weight_scales = {0.05, 1e6, 1e6};

  void validate() const;
};

struct RefineLayer {
  nn::MultiHeadAttention agent_attn;
  nn::LayerNorm agent_norm;
  nn::MultiHeadAttention ego_attn;
  nn::LayerNorm ego_norm;
  nn::Mlp ffn;
  nn::LayerNorm ffn_norm;
};

/// Agents padded to the largest count in the batch.
struct AgentBatch {
  Tensor features{Shape{1}, 0.0};  // [B x A x 8]
  std::vector<std::size_t> counts;
  std::size_t max_count() const;
};

class Refiner {
 public:
  static Refiner create(ParameterSet& params, const RefinerConfig& cfg, Rng& rng);
  const RefinerConfig& config() const { return cfg_; }

  /// One-hot semantic maps [B x 4 x 32 x 32] -> [B x d_sem].
  Var encode_semantic(Var maps) const;
  /// GRU encode, fuse with f_sem, GRU decode residuals: y' = y + delta. [B x H x 3].
  Var optimize_points(Var traj, Var f_sem) const;
  /// Current positive weights (smooth, curv, accel) as a [3] node.
  Var constraint_weights(Graph& g) const;
  Var project(Var traj) const;
  /// Cascade of agent attention, ego attention and FFN per layer, then a residual head.
  Var cross_attention_refine(Var traj, const AgentBatch& agents, Var q_ego) const;

  struct Output {
    Var optimized;   // y'
    Var projected;   // y hat
    Var refined;     // Y
  };
  Output refine(Var traj, Var maps, const AgentBatch& agents, Var q_ego) const;

 private:
  RefinerConfig cfg_;
  nn::Conv2d conv1_;
  nn::Conv2d conv2_;
  nn::Linear sem_out_;
  nn::GruCell encoder_;
  nn::Mlp fuse_;
  nn::GruCell decoder_;
  nn::Linear delta_;
  Parameter* weight_raw_ = nullptr;
  nn::Linear point_embed_;
  Parameter* point_pos_ = nullptr;
  nn::Linear agent_embed_;
  std::vector<RefineLayer> layers_;
  nn::Linear head_;
};

/// Normalized points (x, y in kPointUnit, heading in rad).
Var normalize_points(Var traj);

Tensor semantic_batch(std::span<const Scene* const> scenes);
AgentBatch agent_batch(std::span<const Scene* const> scenes);

}  // namespace artemis
