#include "artemis/training/model.hpp"

#include "artemis/common/errors.hpp"
#include "artemis/scene/generator.hpp"

namespace artemis {

namespace {

constexpr std::size_t kPatchSide = 4;  // cells per BEV token side
constexpr std::size_t kPatchCells = kPatchSide * kPatchSide;

}  // namespace

Batch make_batch(std::span<const Scene* const> scenes) {
  if (scenes.empty()) {
    throw std::invalid_argument("make_batch: no scenes");
  }
  Batch b;
  b.scenes.assign(scenes.begin(), scenes.end());
  b.bev = bev_batch(scenes);
  b.ego = ego_feature_batch(scenes);
  b.maps = semantic_batch(scenes);
  b.agents = agent_batch(scenes);
  b.gt = Tensor(Shape{scenes.size(), kHorizon, 3}, 0.0);
  constexpr std::size_t n = MapGrid::kCells;
  constexpr std::size_t patches = n / kPatchSide;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    const Scene& sc = *scenes[s];
    b.commands.push_back(sc.ego.command);
    for (std::size_t t = 0; t < kHorizon; ++t) {
      b.gt[(s * kHorizon + t) * 3] = sc.gt[t].x;
      b.gt[(s * kHorizon + t) * 3 + 1] = sc.gt[t].y;
      b.gt[(s * kHorizon + t) * 3 + 2] = sc.gt[t].heading;
    }
    // Token px * 8 + py covers cells [4px, 4px + 4) x [4py, 4py + 4).
    for (std::size_t px = 0; px < patches; ++px) {
      for (std::size_t py = 0; py < patches; ++py) {
        for (std::size_t lx = 0; lx < kPatchSide; ++lx) {
          for (std::size_t ly = 0; ly < kPatchSide; ++ly) {
            const std::size_t cell = (px * kPatchSide + lx) * n + py * kPatchSide + ly;
            b.semantic_labels.push_back(static_cast<int>(sc.semantic_map[cell]));
          }
        }
      }
    }
  }
  return b;
}

Model Model::create(ParameterSet& params, const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  Model m;
  m.cfg_ = cfg;
  m.planner_ = Planner::create(params, cfg.planner, rng);
  if (cfg.use_refiner) {
    m.refiner_ = Refiner::create(params, cfg.refiner, rng);
  }
  m.semantic_head_ =
      nn::Linear::create(params, "semantic_head", cfg.planner.d_model, kPatchCells * cfg.semantic_classes, rng);
  return m;
}

bool Model::is_perception_parameter(const Parameter& p) {
  return p.name.rfind("planner.bev_proj", 0) == 0 || p.name.rfind("semantic_head", 0) == 0;
}

Var Model::semantic_logits(Graph& g, const Batch& batch) const {
  Var bev = planner_.project_bev(g.constant(batch.bev));
  Var logits = semantic_head_(bev);  // [B x C x 16 * classes]
  const std::size_t rows = logits.value().size() / cfg_.semantic_classes;
  return reshape(logits, {rows, cfg_.semantic_classes});
}

ModelOutput Model::forward(Graph& g, const Batch& batch) const {
  ModelOutput out;
  out.rollout = planner_.rollout(g.constant(batch.bev), g.constant(batch.ego), batch.commands);
  if (refiner_) {
    out.trajectory =
        refiner_->refine(out.rollout.mu, g.constant(batch.maps), batch.agents, out.rollout.queries).refined;
  } else {
    out.trajectory = out.rollout.mu;
  }
  out.semantic_logits = semantic_logits(g, batch);
  return out;
}

BatchLosses compute_losses(Graph& g, const ModelOutput& out, const Batch& batch, const LossWeights& w) {
  Var gt = g.constant(batch.gt);
  BatchLosses l;
  l.l1 = traj_l1_loss(out.trajectory, gt);
  LossTerms terms;
  terms.traj = l.l1;
  if (w.nll != 0.0) {
    l.nll = nll_loss(out.rollout.mu, out.rollout.sigma, gt);
    terms.nll = l.nll;
  }
  if (w.sem != 0.0) {
    l.sem = cross_entropy(out.semantic_logits, batch.semantic_labels);
    terms.sem = l.sem;
  }
  l.total = total_loss(g, terms, w);
  return l;
}

}  // namespace artemis
