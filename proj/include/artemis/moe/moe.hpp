#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "artemis/common/rng.hpp"
#include "artemis/tensor/nn.hpp"

namespace artemis {

struct MoEConfig {
  std::size_t n_private = 5;
  std::size_t n_shared = 1;
  std::size_t k = 2;
  std::size_t d_model = 64;
  std::size_t router_hidden = 0;  // 0 means d_model / 2
  std::size_t heads = 4;

  /// Throws ConfigError on k outside [1, n_private] or inconsistent widths.
  void validate() const;
  std::size_t hidden() const { return router_hidden == 0 ? d_model / 2 : router_hidden; }
};

struct RouterOutput {
  Tensor scores{Shape{1}, 0.0};               // [B x n_private], softmax over all experts
  std::vector<std::size_t> topk_indices;      // [B x k], descending score, lower index on ties
  Var topk_weights;                           // [B x k], renormalized over the selected experts
  std::size_t k = 0;

  std::size_t batch() const { return k == 0 ? 0 : topk_indices.size() / k; }
  std::size_t expert(std::size_t sample, std::size_t slot) const { return topk_indices[sample * k + slot]; }
};

/// Indices of the k largest entries of `row`, ties to the lower index.
std::vector<std::size_t> top_k(std::span<const double> row, std::size_t k);

struct DispatchBlock {
  std::size_t expert;
  std::size_t start;
  std::size_t length;
  friend bool operator==(const DispatchBlock&, const DispatchBlock&) = default;
};

struct DispatchPlan {
  std::vector<std::size_t> perm;  // perm[j] = original sample placed at position j
  std::vector<DispatchBlock> blocks;
};

/// Stable argsort of the ids followed by run-length encoding.
DispatchPlan build_dispatch_plan(std::span<const std::size_t> expert_ids);

std::vector<std::size_t> inverse_permutation(std::span<const std::size_t> perm);
/// Rows of x reordered so row j is x[perm[j]].
Var apply_perm(Var x, std::span<const std::size_t> perm);
/// Undoes apply_perm.
Var invert_perm(Var x, std::span<const std::size_t> perm);

/// Cross-attention from planning tokens to BEV tokens followed by a feed-forward
/// layer, both with residual connections and post layer norm.
struct Expert {
  nn::MultiHeadAttention attn;
  nn::LayerNorm norm1;
  nn::Mlp ffn;
  nn::LayerNorm norm2;

  static Expert create(ParameterSet& params, const std::string& name, std::size_t d_model, std::size_t heads,
                       Rng& rng);
  /// bev [b x C x D], tokens [b x L x D] -> [b x L x D]
  Var operator()(Var bev, Var tokens) const;
};

struct Router {
  nn::Linear reduce;  // 3D -> hidden
  nn::Linear score;   // hidden -> n_private

  static Router create(ParameterSet& params, const std::string& name, const MoEConfig& cfg, Rng& rng);
  /// Raw logits [B x n_private].
  Var logits(Var q_r) const;
};

class MoEBlock {
 public:
  static MoEBlock create(ParameterSet& params, const std::string& name, const MoEConfig& cfg, Rng& rng);

  const MoEConfig& config() const { return cfg_; }
  const Expert& private_expert(std::size_t e) const { return privates_.at(e); }
  const Expert& shared_expert(std::size_t e) const { return shared_.at(e); }

  /// Throws DivergenceError naming the first sample with non-finite scores.
  RouterOutput route(Var q_r) const;

  /// One-slot routing with unit weight to the given expert per sample.
  RouterOutput forced_route(Graph& g, std::span<const std::size_t> experts) const;

  /// Batch-reallocated dispatch: per slot, sort the batch by expert, run each
  /// contiguous block once, restore the order, then fuse
  ///   out = sum_slots g * private + sum_shared shared + tokens.
  Var forward(Var bev, Var tokens, const RouterOutput& routing) const;
  Var forward(Var bev, Var tokens, Var q_r) const { return forward(bev, tokens, route(q_r)); }

  /// Per-sample reference: routes and runs every sample on its own.
  Var forward_naive(Var bev, Var tokens, Var q_r) const;
  Var forward_naive(Var bev, Var tokens, const RouterOutput& routing) const;

 private:
  MoEConfig cfg_;
  Router router_;
  std::vector<Expert> privates_;
  std::vector<Expert> shared_;
};

}  // namespace artemis
