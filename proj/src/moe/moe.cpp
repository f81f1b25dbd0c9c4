#include "artemis/moe/moe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "artemis/common/errors.hpp"

namespace artemis {

void MoEConfig::validate() const {
  if (n_private == 0) {
    throw ConfigError("moe: n_private must be at least 1");
  }
  if (k < 1 || k > n_private) {
    throw ConfigError("moe: k = " + std::to_string(k) + " must lie in [1, n_private = " + std::to_string(n_private) +
                      "]");
  }
  if (d_model == 0 || heads == 0 || d_model % heads != 0) {
    throw ConfigError("moe: d_model " + std::to_string(d_model) + " must be a positive multiple of heads " +
                      std::to_string(heads));
  }
  if (hidden() == 0) {
    throw ConfigError("moe: router hidden width must be positive");
  }
}

std::vector<std::size_t> top_k(std::span<const double> row, std::size_t k) {
  std::vector<std::size_t> order(row.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
  order.resize(k);
  return order;
}

DispatchPlan build_dispatch_plan(std::span<const std::size_t> expert_ids) {
  DispatchPlan plan;
  plan.perm.resize(expert_ids.size());
  std::iota(plan.perm.begin(), plan.perm.end(), 0);
  std::stable_sort(plan.perm.begin(), plan.perm.end(),
                   [&](std::size_t a, std::size_t b) { return expert_ids[a] < expert_ids[b]; });
  for (std::size_t j = 0; j < plan.perm.size(); ++j) {
    const std::size_t e = expert_ids[plan.perm[j]];
    if (plan.blocks.empty() || plan.blocks.back().expert != e) {
      plan.blocks.push_back({e, j, 0});
    }
    ++plan.blocks.back().length;
  }
  return plan;
}

std::vector<std::size_t> inverse_permutation(std::span<const std::size_t> perm) {
  std::vector<std::size_t> inv(perm.size(), perm.size());
  for (std::size_t j = 0; j < perm.size(); ++j) {
    if (perm[j] >= perm.size() || inv[perm[j]] != perm.size()) {
      throw std::invalid_argument("not a permutation of 0.." + std::to_string(perm.size() - 1));
    }
    inv[perm[j]] = j;
  }
  return inv;
}

Var apply_perm(Var x, std::span<const std::size_t> perm) {
  if (x.shape().empty() || perm.size() != x.shape()[0]) {
    throw DimensionError("apply_perm: permutation of " + std::to_string(perm.size()) + " for " +
                         shape_str(x.shape()));
  }
  inverse_permutation(perm);  // validates
  return gather(x, perm);
}

Var invert_perm(Var x, std::span<const std::size_t> perm) {
  if (x.shape().empty() || perm.size() != x.shape()[0]) {
    throw DimensionError("invert_perm: permutation of " + std::to_string(perm.size()) + " for " +
                         shape_str(x.shape()));
  }
  const auto inv = inverse_permutation(perm);
  return gather(x, inv);
}

Expert Expert::create(ParameterSet& params, const std::string& name, std::size_t d_model, std::size_t heads,
                      Rng& rng) {
  Expert e;
  e.attn = nn::MultiHeadAttention::create(params, name + ".attn", d_model, heads, rng);
  e.norm1 = nn::LayerNorm::create(params, name + ".norm1", d_model);
  e.ffn = nn::Mlp::create(params, name + ".ffn", d_model, 4 * d_model, d_model, rng);
  e.norm2 = nn::LayerNorm::create(params, name + ".norm2", d_model);
  return e;
}

Var Expert::operator()(Var bev, Var tokens) const {
  Var h = norm1(add(tokens, attn(tokens, bev, AttentionMask::none())));
  return norm2(add(h, ffn(h)));
}

Router Router::create(ParameterSet& params, const std::string& name, const MoEConfig& cfg, Rng& rng) {
  Router r;
  r.reduce = nn::Linear::create(params, name + ".reduce", 3 * cfg.d_model, cfg.hidden(), rng);
  r.score = nn::Linear::create(params, name + ".score", cfg.hidden(), cfg.n_private, rng);
  return r;
}

Var Router::logits(Var q_r) const { return score(relu(reduce(q_r))); }

MoEBlock MoEBlock::create(ParameterSet& params, const std::string& name, const MoEConfig& cfg, Rng& rng) {
  cfg.validate();
  MoEBlock m;
  m.cfg_ = cfg;
  m.router_ = Router::create(params, name + ".router", cfg, rng);
  for (std::size_t e = 0; e < cfg.n_private; ++e) {
    m.privates_.push_back(Expert::create(params, name + ".private" + std::to_string(e), cfg.d_model, cfg.heads, rng));
  }
  for (std::size_t e = 0; e < cfg.n_shared; ++e) {
    m.shared_.push_back(Expert::create(params, name + ".shared" + std::to_string(e), cfg.d_model, cfg.heads, rng));
  }
  return m;
}

RouterOutput MoEBlock::route(Var q_r) const {
  if (q_r.shape().size() != 2 || q_r.shape()[1] != 3 * cfg_.d_model) {
    throw DimensionError("route: routing query " + shape_str(q_r.shape()) + " must be [B x " +
                         std::to_string(3 * cfg_.d_model) + "]");
  }
  Var logits = router_.logits(q_r);
  Var scores = softmax(logits);
  const Tensor& sv = scores.value();
  const std::size_t batch = sv.rows();
  const std::size_t n = cfg_.n_private;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t e = 0; e < n; ++e) {
      if (!std::isfinite(logits.value()[b * n + e])) {
        throw DivergenceError("router produced non-finite scores for sample " + std::to_string(b));
      }
    }
  }
  RouterOutput out;
  out.k = cfg_.k;
  out.scores = sv;
  out.topk_indices.reserve(batch * cfg_.k);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto idx = top_k(std::span<const double>(sv.data().data() + b * n, n), cfg_.k);
    out.topk_indices.insert(out.topk_indices.end(), idx.begin(), idx.end());
  }
  // Softmax over the selected logits equals the selected scores renormalized.
  out.topk_weights = softmax(take_per_row(logits, out.topk_indices, cfg_.k));
  return out;
}

RouterOutput MoEBlock::forced_route(Graph& g, std::span<const std::size_t> experts) const {
  RouterOutput out;
  out.k = 1;
  out.topk_indices.assign(experts.begin(), experts.end());
  for (auto e : experts) {
    if (e >= cfg_.n_private) {
      throw ConfigError("forced routing to expert " + std::to_string(e) + " but only " +
                        std::to_string(cfg_.n_private) + " exist");
    }
  }
  out.scores = Tensor(Shape{experts.size(), cfg_.n_private}, 0.0);
  for (std::size_t b = 0; b < experts.size(); ++b) {
    out.scores[b * cfg_.n_private + experts[b]] = 1.0;
  }
  out.topk_weights = g.constant(Tensor(Shape{experts.size(), 1}, 1.0));
  return out;
}

Var MoEBlock::forward(Var bev, Var tokens, const RouterOutput& routing) const {
  const std::size_t batch = routing.batch();
  if (bev.shape().size() != 3 || tokens.shape().size() != 3 || bev.shape()[0] != batch ||
      tokens.shape()[0] != batch) {
    throw DimensionError("moe_block: bev " + shape_str(bev.shape()) + " and tokens " + shape_str(tokens.shape()) +
                         " must be batched over " + std::to_string(batch) + " routed samples");
  }
  Var fused;
  std::vector<std::size_t> ids(batch);
  for (std::size_t slot = 0; slot < routing.k; ++slot) {
    for (std::size_t b = 0; b < batch; ++b) {
      ids[b] = routing.expert(b, slot);
    }
    const DispatchPlan plan = build_dispatch_plan(ids);
    Var bev_sorted = apply_perm(bev, plan.perm);
    Var tok_sorted = apply_perm(tokens, plan.perm);
    std::vector<Var> outputs;
    outputs.reserve(plan.blocks.size());
    for (const DispatchBlock& blk : plan.blocks) {
      // Blocks come from run-length encoding, so none is empty.
      outputs.push_back(privates_[blk.expert](slice(bev_sorted, 0, blk.start, blk.length),
                                              slice(tok_sorted, 0, blk.start, blk.length)));
    }
    Var restored = invert_perm(outputs.size() == 1 ? outputs[0] : concat(outputs, 0), plan.perm);
    Var gate = reshape(slice(routing.topk_weights, 1, slot, 1), {batch});
    Var weighted = scale_groups(restored, gate);
    fused = slot == 0 ? weighted : add(fused, weighted);
  }
  for (const Expert& e : shared_) {
    fused = add(fused, e(bev, tokens));
  }
  return add(fused, tokens);
}

Var MoEBlock::forward_naive(Var bev, Var tokens, Var q_r) const {
  const std::size_t batch = q_r.shape().at(0);
  std::vector<Var> rows;
  rows.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    Var bev_b = slice(bev, 0, b, 1);
    Var tok_b = slice(tokens, 0, b, 1);
    const RouterOutput r = route(slice(q_r, 0, b, 1));
    Var out;
    for (std::size_t slot = 0; slot < r.k; ++slot) {
      Var w = reshape(slice(r.topk_weights, 1, slot, 1), {1});
      Var term = scale_groups(privates_[r.expert(0, slot)](bev_b, tok_b), w);
      out = slot == 0 ? term : add(out, term);
    }
    for (const Expert& e : shared_) {
      out = add(out, e(bev_b, tok_b));
    }
    rows.push_back(add(out, tok_b));
  }
  return rows.size() == 1 ? rows[0] : concat(rows, 0);
}

Var MoEBlock::forward_naive(Var bev, Var tokens, const RouterOutput& routing) const {
  const std::size_t batch = routing.batch();
  std::vector<Var> rows;
  rows.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    Var bev_b = slice(bev, 0, b, 1);
    Var tok_b = slice(tokens, 0, b, 1);
    Var out;
    for (std::size_t slot = 0; slot < routing.k; ++slot) {
      Var w = reshape(slice(slice(routing.topk_weights, 0, b, 1), 1, slot, 1), {1});
      Var term = scale_groups(privates_[routing.expert(b, slot)](bev_b, tok_b), w);
      out = slot == 0 ? term : add(out, term);
    }
    for (const Expert& e : shared_) {
      out = add(out, e(bev_b, tok_b));
    }
    rows.push_back(add(out, tok_b));
  }
  return rows.size() == 1 ? rows[0] : concat(rows, 0);
}

}  // namespace artemis
