#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "artemis/moe/moe.hpp"
#include "artemis/scene/scene.hpp"

namespace artemis {

enum class RoutingMode { kIntrinsic, kCommand, kFixed };

struct PlannerConfig {
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t encoder_layers = 2;
  std::size_t d_feat = 32;
  std::size_t horizon = kHorizon;
  MoEConfig moe;  // d_model and heads are copied from above
  bool use_moe = true;         // false: one dense expert replaces the block
  bool autoregressive = true;  // false: all queries decoded in a single pass
  RoutingMode routing = RoutingMode::kIntrinsic;
  std::size_t fixed_expert = 0;
  double sigma_floor = 1e-3;
  double position_scale = 10.0;  // metres per unit of head output for x and y

  void validate() const;
  MoEConfig moe_config() const;
};

/// Post-norm transformer encoder layer over planning queries.
struct EncoderLayer {
  nn::MultiHeadAttention attn;
  nn::LayerNorm norm1;
  nn::Mlp ffn;
  nn::LayerNorm norm2;

  static EncoderLayer create(ParameterSet& params, const std::string& name, std::size_t d_model, std::size_t heads,
                             Rng& rng);
  Var operator()(Var x, const AttentionMask& mask) const;
};

struct PlanningSequence {
  Var queries;  // [B x H x D]
  std::size_t batch = 0;
  std::size_t filled = 0;
  bool pe_applied = false;
  std::size_t pe_applications = 0;  // instrumentation: must end at exactly 1
};

struct ConcatQuery {
  Var tokens;                  // [B x (H + 2) x D], zero padded
  std::size_t active = 0;      // leading tokens in use
  std::vector<std::uint8_t> key_valid;  // [H + 2], 1 for active positions
};

struct StepOutput {
  Var mu;      // [B x 3]
  Var sigma;   // [B x 3]
  Var q_next;  // [B x D]
  std::vector<std::size_t> experts;  // [B x k] experts chosen at this step (empty without MoE)
};

struct RolloutOutput {
  Var mu;       // [B x H x 3]
  Var sigma;    // [B x H x 3]
  Var queries;  // final Q_{1:H}, [B x H x D]
  std::size_t pe_applications = 0;
  std::vector<std::size_t> expert_counts;  // selections per private expert over the rollout
};

struct WaypointDistribution {
  std::array<double, 3> mu{};
  std::array<double, 3> sigma{};
};

enum class SampleMode { kMean, kSample };

/// Mean mode returns mu; sample mode adds sigma * N(0, 1). The heading is wrapped.
Pose sample_waypoint(const WaypointDistribution& dist, SampleMode mode, Rng& rng);

struct RolloutOutput;

/// Waypoints of sample b in step order, one draw per step in sample mode.
Trajectory sample_trajectory(const RolloutOutput& out, std::size_t b, SampleMode mode, Rng& rng);

class Planner {
 public:
  static Planner create(ParameterSet& params, const PlannerConfig& cfg, Rng& rng);

  const PlannerConfig& config() const { return cfg_; }
  const MoEBlock* moe() const { return moe_ ? &*moe_ : nullptr; }
  Parameter& pe_table() const { return *pe_table_; }
  Parameter& te_table() const { return *te_table_; }
  Parameter& start_tokens() const { return *start_tokens_; }

  /// ego features [B x 8] -> Q_s [B x D]
  Var encode_ego(Var ego) const;
  /// bev tokens [B x C x d_feat] -> [B x C x D]
  Var project_bev(Var bev) const;

  PlanningSequence init_sequence(Graph& g, std::size_t batch) const;
  /// Causal self-attention over the first max(t, 1) committed queries.
  Var encoder_update(const PlanningSequence& seq) const;
  ConcatQuery build_concat_query(Var q_s, const PlanningSequence& seq, Var encoded) const;

  /// One autoregressive step. `commands` is needed only for command routing.
  StepOutput ar_step(Var bev, Var q_s, PlanningSequence& seq, std::span<const Command> commands = {}) const;

  /// Full decode; bev [B x C x d_feat], ego [B x 8].
  RolloutOutput rollout(Var bev_feat, Var ego, std::span<const Command> commands = {}) const;

 private:
  Var te_row(Graph& g, std::size_t t, std::size_t batch) const;
  Var mix(Var bev, Var tokens, Var q_r, std::span<const Command> commands, std::vector<std::size_t>* experts) const;
  StepOutput head(Var q) const;
  /// raw [.. x 6] -> (mu, sigma), each [.. x 3]
  std::pair<Var, Var> decode(Var raw) const;
  RolloutOutput one_shot(Var bev, Var q_s, std::span<const Command> commands) const;

  PlannerConfig cfg_;
  nn::Linear bev_proj_;
  nn::Mlp ego_mlp_;
  Parameter* te_table_ = nullptr;
  Parameter* pe_table_ = nullptr;
  Parameter* start_tokens_ = nullptr;
  std::vector<EncoderLayer> encoder_;
  std::optional<MoEBlock> moe_;
  std::optional<Expert> dense_;
  nn::Mlp head_;
};

/// [B x 8] ego feature tensor for a batch of scenes.
Tensor ego_feature_batch(std::span<const Scene* const> scenes);
/// [B x C x d_feat] stacked BEV tokens.
Tensor bev_batch(std::span<const Scene* const> scenes);

}  // namespace artemis
