#include "artemis/planner/planner.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "artemis/common/angles.hpp"
#include "artemis/common/errors.hpp"

namespace artemis {

namespace {

// Fixed input normalization of the ego features (command, velocity, acceleration).
constexpr std::array<double, 8> kEgoScale = {1.0, 1.0, 1.0, 1.0, 0.1, 0.1, 0.5, 0.5};

}  // namespace

void PlannerConfig::validate() const {
  if (d_model == 0 || heads == 0 || d_model % heads != 0) {
    throw ConfigError("planner: d_model must be a positive multiple of heads");
  }
  if (horizon != kHorizon) {
    throw ConfigError("planner: horizon is fixed at 8 waypoints");
  }
  if (d_feat == 0) {
    throw ConfigError("planner: d_feat must be positive");
  }
  if (!(position_scale > 0.0)) {
    throw ConfigError("planner: position scale must be positive");
  }
  if (!(sigma_floor > 0.0)) {
    throw ConfigError("planner: sigma floor must be positive");
  }
  if (use_moe) {
    moe_config().validate();
    if (routing == RoutingMode::kCommand && moe.n_private < kNumCommands) {
      throw ConfigError("planner: command routing needs at least 4 private experts");
    }
    if (routing == RoutingMode::kFixed && fixed_expert >= moe.n_private) {
      throw ConfigError("planner: fixed expert " + std::to_string(fixed_expert) + " out of range");
    }
  }
}

MoEConfig PlannerConfig::moe_config() const {
  MoEConfig m = moe;
  m.d_model = d_model;
  m.heads = heads;
  return m;
}

EncoderLayer EncoderLayer::create(ParameterSet& params, const std::string& name, std::size_t d_model,
                                  std::size_t heads, Rng& rng) {
  EncoderLayer l;
  l.attn = nn::MultiHeadAttention::create(params, name + ".attn", d_model, heads, rng);
  l.norm1 = nn::LayerNorm::create(params, name + ".norm1", d_model);
  l.ffn = nn::Mlp::create(params, name + ".ffn", d_model, 4 * d_model, d_model, rng);
  l.norm2 = nn::LayerNorm::create(params, name + ".norm2", d_model);
  return l;
}

Var EncoderLayer::operator()(Var x, const AttentionMask& mask) const {
  Var h = norm1(add(x, attn(x, x, mask)));
  return norm2(add(h, ffn(h)));
}

Pose sample_waypoint(const WaypointDistribution& dist, SampleMode mode, Rng& rng) {
  std::array<double, 3> v = dist.mu;
  if (mode == SampleMode::kSample) {
    for (std::size_t i = 0; i < 3; ++i) {
      v[i] += dist.sigma[i] * rng.normal();
    }
  }
  return {v[0], v[1], wrap_to_pi(v[2])};
}

Trajectory sample_trajectory(const RolloutOutput& out, std::size_t b, SampleMode mode, Rng& rng) {
  const Tensor& mu = out.mu.value();
  const Tensor& sigma = out.sigma.value();
  const std::size_t h = mu.dim(1);
  if (b >= mu.dim(0) || h != kHorizon) {
    throw DimensionError("sample_trajectory: no sample " + std::to_string(b) + " in " + shape_str(mu.shape()));
  }
  Trajectory traj;
  for (std::size_t t = 0; t < h; ++t) {
    WaypointDistribution d;
    for (std::size_t c = 0; c < 3; ++c) {
      d.mu[c] = mu[(b * h + t) * 3 + c];
      d.sigma[c] = sigma[(b * h + t) * 3 + c];
    }
    traj[t] = sample_waypoint(d, mode, rng);
  }
  return traj;
}

Planner Planner::create(ParameterSet& params, const PlannerConfig& cfg, Rng& rng) {
  cfg.validate();
  Planner p;
  p.cfg_ = cfg;
  const std::size_t d = cfg.d_model;
  const std::size_t h = cfg.horizon;
  p.bev_proj_ = nn::Linear::create(params, "planner.bev_proj", cfg.d_feat, d, rng);
  p.ego_mlp_ = nn::Mlp::create(params, "planner.ego", 8, d, d, rng);
  p.te_table_ = &nn::add_table(params, "planner.te_table", {h, d}, rng, 0.5);
  p.pe_table_ = &nn::add_table(params, "planner.pe_table", {h, d}, rng, 0.5);
  p.start_tokens_ = &nn::add_table(params, "planner.start_tokens", {h, d}, rng, 0.5);
  for (std::size_t i = 0; i < cfg.encoder_layers; ++i) {
    p.encoder_.push_back(EncoderLayer::create(params, "planner.encoder" + std::to_string(i), d, cfg.heads, rng));
  }
  if (cfg.use_moe) {
    p.moe_ = MoEBlock::create(params, "planner.moe", cfg.moe_config(), rng);
  } else {
    p.dense_ = Expert::create(params, "planner.dense", d, cfg.heads, rng);
  }
  p.head_ = nn::Mlp::create(params, "planner.head", d, d, 6, rng);
  return p;
}

Var Planner::encode_ego(Var ego) const { return ego_mlp_(ego); }

Var Planner::project_bev(Var bev) const { return bev_proj_(bev); }

PlanningSequence Planner::init_sequence(Graph& g, std::size_t batch) const {
  const std::size_t h = cfg_.horizon;
  const std::size_t d = cfg_.d_model;
  PlanningSequence seq;
  seq.batch = batch;
  // Learned start tokens plus positional embedding, added once here and never again.
  Var init = add(g.param(*start_tokens_), g.param(*pe_table_));
  seq.pe_applied = true;
  seq.pe_applications = 1;
  std::vector<Var> copies(batch, reshape(init, {1, h, d}));
  seq.queries = batch == 1 ? copies[0] : concat(copies, 0);
  return seq;
}

Var Planner::encoder_update(const PlanningSequence& seq) const {
  if (!seq.pe_applied) {
    throw StateError("planning sequence used before init_sequence");
  }
  const std::size_t active = std::max<std::size_t>(seq.filled, 1);
  Var x = slice(seq.queries, 1, 0, active);
  for (const EncoderLayer& layer : encoder_) {
    x = layer(x, AttentionMask::causal());
  }
  return x;
}

Var Planner::te_row(Graph& g, std::size_t t, std::size_t batch) const {
  Var row = reshape(slice(g.param(*te_table_), 0, t, 1), {1, 1, cfg_.d_model});
  if (batch == 1) {
    return row;
  }
  std::vector<Var> copies(batch, row);
  return concat(copies, 0);
}

ConcatQuery Planner::build_concat_query(Var q_s, const PlanningSequence& seq, Var encoded) const {
  const std::size_t d = cfg_.d_model;
  const std::size_t b = seq.batch;
  const std::size_t t = seq.filled;
  const std::size_t active = encoded.shape()[1];
  Graph& g = *q_s.graph();
  ConcatQuery cq;
  cq.active = active + 2;
  std::vector<Var> parts = {te_row(g, t, b), reshape(q_s, {b, 1, d}), encoded};
  const std::size_t pad = cfg_.horizon + 2 - cq.active;
  if (pad > 0) {
    parts.push_back(g.constant(Tensor(Shape{b, pad, d}, 0.0)));
  }
  cq.tokens = concat(parts, 1);
  cq.key_valid.assign(cfg_.horizon + 2, 0);
  std::fill(cq.key_valid.begin(), cq.key_valid.begin() + static_cast<std::ptrdiff_t>(cq.active), 1);
  return cq;
}

Var Planner::mix(Var bev, Var tokens, Var q_r, std::span<const Command> commands,
                 std::vector<std::size_t>* experts) const {
  if (!moe_) {
    return add((*dense_)(bev, tokens), tokens);
  }
  const std::size_t b = tokens.shape()[0];
  RouterOutput routing;
  switch (cfg_.routing) {
    case RoutingMode::kIntrinsic:
      routing = moe_->route(q_r);
      break;
    case RoutingMode::kCommand: {
      if (commands.size() != b) {
        throw ConfigError("command routing needs one command per sample");
      }
      std::vector<std::size_t> ids;
      for (Command c : commands) {
        ids.push_back(static_cast<std::size_t>(c));
      }
      routing = moe_->forced_route(*tokens.graph(), ids);
      break;
    }
    case RoutingMode::kFixed: {
      const std::vector<std::size_t> ids(b, cfg_.fixed_expert);
      routing = moe_->forced_route(*tokens.graph(), ids);
      break;
    }
  }
  if (experts != nullptr) {
    *experts = routing.topk_indices;
  }
  return moe_->forward(bev, tokens, routing);
}

std::pair<Var, Var> Planner::decode(Var raw) const {
  const int last = static_cast<int>(raw.shape().size()) - 1;
  Var mu = slice(raw, last, 0, 3);
  Tensor s(mu.shape(), 1.0);
  for (std::size_t i = 0; i < s.size(); i += 3) {
    s[i] = cfg_.position_scale;
    s[i + 1] = cfg_.position_scale;
  }
  mu = mul(mu, raw.graph()->constant(std::move(s)));
  Var sigma = add_scalar(softplus(slice(raw, last, 3, 3)), cfg_.sigma_floor);
  return {mu, sigma};
}

StepOutput Planner::head(Var q) const {
  StepOutput out;
  std::tie(out.mu, out.sigma) = decode(head_(q));
  out.q_next = q;
  return out;
}

StepOutput Planner::ar_step(Var bev, Var q_s, PlanningSequence& seq, std::span<const Command> commands) const {
  if (!seq.pe_applied) {
    throw StateError("planning sequence used before init_sequence");
  }
  if (seq.filled >= cfg_.horizon) {
    throw StateError("planning sequence is complete");
  }
  const std::size_t d = cfg_.d_model;
  const std::size_t b = seq.batch;
  const std::size_t t = seq.filled;
  Var encoded = encoder_update(seq);
  const ConcatQuery cq = build_concat_query(q_s, seq, encoded);
  Var tokens = slice(cq.tokens, 1, 0, cq.active);  // padding never reaches the experts
  Var q_t = reshape(slice(encoded, 1, encoded.shape()[1] - 1, 1), {b, d});
  Var te = reshape(slice(cq.tokens, 1, 0, 1), {b, d});
  Var parts[] = {te, q_s, q_t};
  Var q_r = concat(parts, 1);
  std::vector<std::size_t> experts;
  Var mixed = mix(bev, tokens, q_r, commands, &experts);
  Var q_next = reshape(slice(mixed, 1, cq.active - 1, 1), {b, d});
  StepOutput out = head(q_next);
  out.experts = std::move(experts);

  // The newest query takes slot t; everything else is carried over unchanged.
  std::vector<Var> slots;
  if (t > 0) {
    slots.push_back(slice(seq.queries, 1, 0, t));
  }
  slots.push_back(reshape(q_next, {b, 1, d}));
  if (t + 1 < cfg_.horizon) {
    slots.push_back(slice(seq.queries, 1, t + 1, cfg_.horizon - t - 1));
  }
  seq.queries = concat(slots, 1);
  seq.filled = t + 1;
  return out;
}

RolloutOutput Planner::one_shot(Var bev, Var q_s, std::span<const Command> commands) const {
  Graph& g = *bev.graph();
  const std::size_t b = bev.shape()[0];
  const std::size_t d = cfg_.d_model;
  const std::size_t h = cfg_.horizon;
  PlanningSequence seq = init_sequence(g, b);
  Var x = seq.queries;
  for (const EncoderLayer& layer : encoder_) {
    x = layer(x, AttentionMask::causal());
  }
  Var parts[] = {te_row(g, 0, b), reshape(q_s, {b, 1, d}), x};
  Var tokens = concat(parts, 1);
  Var te = reshape(slice(g.param(*te_table_), 0, 0, 1), {1, d});
  std::vector<Var> te_rows(b, te);
  Var q_last = reshape(slice(x, 1, h - 1, 1), {b, d});
  Var route_parts[] = {b == 1 ? te_rows[0] : concat(te_rows, 0), q_s, q_last};
  std::vector<std::size_t> experts;
  Var mixed = mix(bev, tokens, concat(route_parts, 1), commands, &experts);
  Var queries = slice(mixed, 1, 2, h);
  Var raw = head_(queries);  // [B x H x 6]
  RolloutOutput out;
  std::tie(out.mu, out.sigma) = decode(raw);
  out.queries = queries;
  out.pe_applications = seq.pe_applications;
  if (moe_) {
    out.expert_counts.assign(moe_->config().n_private, 0);
    for (auto e : experts) {
      ++out.expert_counts[e];
    }
  }
  return out;
}

RolloutOutput Planner::rollout(Var bev_feat, Var ego, std::span<const Command> commands) const {
  Graph& g = *bev_feat.graph();
  const std::size_t b = bev_feat.shape()[0];
  Var bev = project_bev(bev_feat);
  Var q_s = encode_ego(ego);
  if (!cfg_.autoregressive) {
    return one_shot(bev, q_s, commands);
  }
  PlanningSequence seq = init_sequence(g, b);
  std::vector<Var> mus;
  std::vector<Var> sigmas;
  RolloutOutput out;
  if (moe_) {
    out.expert_counts.assign(moe_->config().n_private, 0);
  }
  for (std::size_t t = 0; t < cfg_.horizon; ++t) {
    StepOutput step = ar_step(bev, q_s, seq, commands);
    mus.push_back(reshape(step.mu, {b, 1, 3}));
    sigmas.push_back(reshape(step.sigma, {b, 1, 3}));
    for (auto e : step.experts) {
      ++out.expert_counts[e];
    }
  }
  out.mu = concat(mus, 1);
  out.sigma = concat(sigmas, 1);
  out.queries = seq.queries;
  out.pe_applications = seq.pe_applications;
  return out;
}

Tensor ego_feature_batch(std::span<const Scene* const> scenes) {
  Tensor t(Shape{scenes.size(), 8}, 0.0);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto f = scenes[i]->ego.features();
    for (std::size_t j = 0; j < 8; ++j) {
      t[i * 8 + j] = f[j] * kEgoScale[j];
    }
  }
  return t;
}

Tensor bev_batch(std::span<const Scene* const> scenes) {
  const Shape& s0 = scenes.front()->bev_tokens.shape();
  Tensor t(Shape{scenes.size(), s0[0], s0[1]}, 0.0);
  const std::size_t n = scenes.front()->bev_tokens.size();
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    if (scenes[i]->bev_tokens.shape() != s0) {
      throw DimensionError("bev_batch: scenes have different token shapes");
    }
    std::copy_n(scenes[i]->bev_tokens.data().data(), n, t.data().data() + i * n);
  }
  return t;
}

}  // namespace artemis
