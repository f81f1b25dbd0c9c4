#include "artemis/refiner/refiner.hpp"

#include <algorithm>
#include <cmath>

#include "artemis/common/errors.hpp"

namespace artemis {

namespace {

// softplus(kUnitRaw) == 1
const double kUnitRaw = std::log(std::exp(1.0) - 1.0);

Var scale_channels(Var x, double xy, double heading) {
  Tensor s(x.shape(), heading);
  for (std::size_t i = 0; i < s.size(); i += 3) {
    s[i] = xy;
    s[i + 1] = xy;
  }
  return mul(x, x.graph()->constant(std::move(s)));
}

Var with_wrapped_heading(Var traj) {
  const std::size_t b = traj.shape()[0];
  const std::size_t h = traj.shape()[1];
  Var parts[] = {slice(traj, 2, 0, 2), wrap_angle(slice(traj, 2, 2, 1))};
  return reshape(concat(parts, 2), {b, h, 3});
}

}  // namespace

void RefinerConfig::validate() const {
  if (d_model == 0 || heads == 0 || d_model % heads != 0) {
    throw ConfigError("refiner: d_model must be a positive multiple of heads");
  }
  if (d_sem == 0 || conv_channels == 0 || gru_hidden == 0) {
    throw ConfigError("refiner: widths must be positive");
  }
  for (double s : weight_scales) {
    if (!(s > 0.0)) {
      throw ConfigError("refiner: constraint weight scales must be positive");
    }
  }
}

std::size_t AgentBatch::max_count() const {
  return counts.empty() ? 0 : *std::max_element(counts.begin(), counts.end());
}

Var normalize_points(Var traj) { return scale_channels(traj, 1.0 / kPointUnit, 1.0); }

Refiner Refiner::create(ParameterSet& params, const RefinerConfig& cfg, Rng& rng) {
  cfg.validate();
  Refiner r;
  r.cfg_ = cfg;
  const std::size_t c = cfg.conv_channels;
  const std::size_t hd = cfg.gru_hidden;
  const std::size_t d = cfg.d_model;
  r.conv1_ = nn::Conv2d::create(params, "refiner.sem.conv1", 4, c, 3, 2, 1, rng);
  r.conv2_ = nn::Conv2d::create(params, "refiner.sem.conv2", c, 2 * c, 3, 2, 1, rng);
  r.sem_out_ = nn::Linear::create(params, "refiner.sem.out", 2 * c, cfg.d_sem, rng);
  r.encoder_ = nn::GruCell::create(params, "refiner.traj_encoder", 3, hd, rng);
  r.fuse_ = nn::Mlp::create(params, "refiner.optimizer", hd + cfg.d_sem, hd, hd, rng);
  r.decoder_ = nn::GruCell::create(params, "refiner.traj_decoder", 3, hd, rng);
  r.delta_ = nn::Linear::create(params, "refiner.output", hd, 3, rng, nn::Init::kZero);
  r.weight_raw_ = &params.add("refiner.constraint_raw", Tensor(Shape{3}, kUnitRaw), false);
  r.point_embed_ = nn::Linear::create(params, "refiner.point_embed", 3, d, rng);
  r.point_pos_ = &nn::add_table(params, "refiner.point_pos", {kHorizon, d}, rng, 0.5);
  r.agent_embed_ = nn::Linear::create(params, "refiner.agent_embed", kAgentFeatures, d, rng);
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    const std::string n = "refiner.layer" + std::to_string(i);
    RefineLayer l;
    l.agent_attn = nn::MultiHeadAttention::create(params, n + ".agent_attn", d, cfg.heads, rng);
    l.agent_norm = nn::LayerNorm::create(params, n + ".agent_norm", d);
    l.ego_attn = nn::MultiHeadAttention::create(params, n + ".ego_attn", d, cfg.heads, rng);
    l.ego_norm = nn::LayerNorm::create(params, n + ".ego_norm", d);
    l.ffn = nn::Mlp::create(params, n + ".ffn", d, 4 * d, d, rng);
    l.ffn_norm = nn::LayerNorm::create(params, n + ".ffn_norm", d);
    r.layers_.push_back(l);
  }
  r.head_ = nn::Linear::create(params, "refiner.head", d, 3, rng, nn::Init::kZero);
  return r;
}

Var Refiner::encode_semantic(Var maps) const {
  const Shape& s = maps.shape();
  if (s.size() != 4 || s[1] != 4) {
    throw DimensionError("encode_semantic: maps " + shape_str(s) + " must be [B x 4 x H x W]");
  }
  Var x = relu(conv2_(relu(conv1_(maps))));
  const Shape& sx = x.shape();
  Var pooled = mean_last(reshape(x, {sx[0], sx[1], sx[2] * sx[3]}));
  return sem_out_(pooled);
}

Var Refiner::optimize_points(Var traj, Var f_sem) const {
  Graph& g = *traj.graph();
  const std::size_t b = traj.shape()[0];
  const std::size_t hd = cfg_.gru_hidden;
  Var x = normalize_points(traj);
  std::vector<Var> steps;
  for (std::size_t t = 0; t < kHorizon; ++t) {
    steps.push_back(reshape(slice(x, 1, t, 1), {b, 3}));
  }
  Var h = g.constant(Tensor(Shape{b, hd}, 0.0));
  for (const Var& s : steps) {
    h = encoder_(s, h);
  }
  Var parts[] = {h, f_sem};
  Var state = fuse_(concat(parts, 1));
  std::vector<Var> deltas;
  for (const Var& s : steps) {
    state = decoder_(s, state);
    deltas.push_back(reshape(delta_(state), {b, 1, 3}));
  }
  Var delta = scale_channels(concat(deltas, 1), kPointUnit, 1.0);
  return with_wrapped_heading(add(traj, delta));
}

Var Refiner::constraint_weights(Graph& g) const {
  Tensor s(Shape{3}, 0.0);
  for (std::size_t i = 0; i < 3; ++i) {
    s[i] = cfg_.weight_scales[i];
  }
  return mul(softplus(g.param(*weight_raw_)), g.constant(std::move(s)));
}

Var Refiner::project(Var traj) const {
  return kinematic_project(traj, constraint_weights(*traj.graph()), cfg_.projection);
}

Var Refiner::cross_attention_refine(Var traj, const AgentBatch& agents, Var q_ego) const {
  Graph& g = *traj.graph();
  const std::size_t b = traj.shape()[0];
  const std::size_t d = cfg_.d_model;
  if (q_ego.shape().size() != 3 || q_ego.shape()[0] != b || q_ego.shape()[2] != d) {
    throw DimensionError("cross_attention_refine: ego queries " + shape_str(q_ego.shape()));
  }
  if (agents.counts.size() != b) {
    throw DimensionError("cross_attention_refine: agent counts for " + std::to_string(agents.counts.size()) +
                         " samples, batch is " + std::to_string(b));
  }
  Var pos = reshape(g.param(*point_pos_), {1, kHorizon, d});
  std::vector<Var> pos_rows(b, pos);
  Var e = add(point_embed_(normalize_points(traj)), b == 1 ? pos : concat(pos_rows, 0));

  const bool any_agents = agents.max_count() > 0;
  Var agent_tokens;
  std::vector<std::uint8_t> has_agents(b, 0);
  if (any_agents) {
    agent_tokens = agent_embed_(g.constant(agents.features));
    for (std::size_t i = 0; i < b; ++i) {
      has_agents[i] = agents.counts[i] > 0 ? 1 : 0;
    }
  }
  for (const RefineLayer& l : layers_) {
    if (any_agents) {
      Var attended = l.agent_norm(add(e, l.agent_attn(e, agent_tokens, AttentionMask::lengths(agents.counts))));
      // Samples without agents skip the sublayer entirely.
      e = select_groups(has_agents, attended, e);
    }
    e = l.ego_norm(add(e, l.ego_attn(e, q_ego, AttentionMask::none())));
    e = l.ffn_norm(add(e, l.ffn(e)));
  }
  Var delta = scale_channels(head_(e), kPointUnit, 1.0);
  return with_wrapped_heading(add(traj, delta));
}

Refiner::Output Refiner::refine(Var traj, Var maps, const AgentBatch& agents, Var q_ego) const {
  Output out;
  out.optimized = optimize_points(traj, encode_semantic(maps));
  out.projected = project(out.optimized);
  out.refined = cross_attention_refine(out.projected, agents, q_ego);
  return out;
}

Tensor semantic_batch(std::span<const Scene* const> scenes) {
  constexpr std::size_t n = MapGrid::kCells;
  Tensor t(Shape{scenes.size(), 4, n, n}, 0.0);
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    const SemanticMap& m = scenes[s]->semantic_map;
    if (m.size() != n * n) {
      throw DimensionError("semantic_batch: map of " + std::to_string(m.size()) + " cells");
    }
    // Map storage is ix * n + iy; channels are laid out [class][ix][iy].
    for (std::size_t cell = 0; cell < n * n; ++cell) {
      const std::size_t cls = m[cell];
      if (cls >= 4) {
        throw std::invalid_argument("semantic_batch: unknown class " + std::to_string(cls));
      }
      t[(s * 4 + cls) * n * n + cell] = 1.0;
    }
  }
  return t;
}

AgentBatch agent_batch(std::span<const Scene* const> scenes) {
  AgentBatch a;
  for (const Scene* s : scenes) {
    a.counts.push_back(s->agents.size());
  }
  const std::size_t width = std::max<std::size_t>(a.max_count(), 1);
  a.features = Tensor(Shape{scenes.size(), width, kAgentFeatures}, 0.0);
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    for (std::size_t i = 0; i < scenes[s]->agents.size(); ++i) {
      const Agent& ag = scenes[s]->agents[i];
      const double f[kAgentFeatures] = {ag.position.x / kPointUnit, ag.position.y / kPointUnit,
                                        ag.velocity.x / kPointUnit, ag.velocity.y / kPointUnit,
                                        std::cos(ag.heading),       std::sin(ag.heading),
                                        ag.half_extent.x,           ag.half_extent.y};
      std::copy(f, f + kAgentFeatures, a.features.data().data() + (s * width + i) * kAgentFeatures);
    }
  }
  return a;
}

}  // namespace artemis
