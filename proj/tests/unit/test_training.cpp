#include <doctest.h>

#include <cmath>
#include <numbers>

#include "../support/gradcheck.hpp"
#include "artemis/common/angles.hpp"
#include "artemis/common/errors.hpp"
#include "artemis/scene/generator.hpp"
#include "artemis/training/optimizer.hpp"
#include "artemis/training/trainer.hpp"

using namespace artemis;
using artemis::testing::check_input_gradients;
using artemis::testing::random_tensor;

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

Tensor traj_tensor(std::size_t b, double fill) { return Tensor(Shape{b, kHorizon, 3}, fill); }

double l1_of(const Tensor& pred, const Tensor& gt) {
  Graph g(false);
  return traj_l1_loss(g.constant(pred), g.constant(gt)).value().item();
}

RunConfig tiny_config() {
  RunConfig c;
  c.model.d_model = 8;
  c.model.heads = 2;
  c.model.encoder_layers = 1;
  c.model.n_private = 4;
  c.model.refine_layers = 1;
  c.train.epochs = 2;
  c.train.stage1_epochs = 1;
  c.train.batch_size = 4;
  c.train.lr = 1e-3;
  c.data.n = 8;
  c.data.val_n = 4;
  return c;
}

struct TinyRun {
  RunConfig cfg = tiny_config();
  Dataset train_set = generate_dataset(8, 3, 0.0);
  Dataset val_set = generate_dataset(4, 1003, 0.0);
};

}  // namespace

TEST_CASE("trajectory L1 examples") {
  CHECK(l1_of(traj_tensor(2, 0.3), traj_tensor(2, 0.3)) == 0.0);
  CHECK(l1_of(traj_tensor(2, 1.3), traj_tensor(2, 0.3)) == doctest::Approx(1.0).epsilon(1e-14));

  // Heading pi - 0.1 against -pi + 0.1 is 0.2 apart, not 2 pi - 0.2.
  Tensor pred = traj_tensor(1, 0.0);
  Tensor gt = traj_tensor(1, 0.0);
  for (std::size_t t = 0; t < kHorizon; ++t) {
    pred[t * 3 + 2] = std::numbers::pi - 0.1;
    gt[t * 3 + 2] = -std::numbers::pi + 0.1;
  }
  CHECK(l1_of(pred, gt) == doctest::Approx(8 * 0.2 / 24).epsilon(1e-12));

  Trajectory a{};
  Trajectory b{};
  a[3].heading = std::numbers::pi - 0.1;
  b[3].heading = -std::numbers::pi + 0.1;
  CHECK(trajectory_l1(a, b) == doctest::Approx(0.2 / 24).epsilon(1e-12));
}

TEST_CASE("NLL closed form and sigma doubling") {
  Graph g(false);
  Var mu = g.constant(traj_tensor(2, 0.7));
  Var one = g.constant(traj_tensor(2, 1.0));
  Var two = g.constant(traj_tensor(2, 2.0));
  const double base = nll_loss(mu, one, mu).value().item();
  CHECK(base == doctest::Approx(0.9189385332046727).epsilon(1e-14));
  CHECK(base == doctest::Approx(kHalfLog2Pi).epsilon(1e-14));
  const double doubled = nll_loss(mu, two, mu).value().item();
  CHECK(doubled - base == doctest::Approx(std::log(2.0)).epsilon(1e-13));

  // One component off by z = 2 sigma adds 0.5 * 4 / 48 to the mean.
  Tensor gt = traj_tensor(2, 0.7);
  gt[5] += 2.0;
  CHECK(nll_loss(mu, one, g.constant(gt)).value().item() == doctest::Approx(base + 2.0 / 48).epsilon(1e-13));
}

TEST_CASE("NLL gradient matches finite differences") {
  Rng rng(31);
  std::vector<Tensor> inputs = {random_tensor({2, kHorizon, 3}, rng), random_tensor({2, kHorizon, 3}, rng, 0.3, 2.0),
                                random_tensor({2, kHorizon, 3}, rng)};
  auto r = check_input_gradients(inputs, [](Graph&, std::span<const Var> v) { return nll_loss(v[0], v[1], v[2]); });
  CHECK(r.max_rel_err <= 1e-5);
}

TEST_CASE("total loss weighting") {
  Graph g(false);
  LossWeights w{.sem = 0, .cls = 0, .box = 0, .traj = 15, .nll = 0.2};
  LossTerms terms;
  terms.traj = g.constant(Tensor::scalar(1.0));
  terms.nll = g.constant(Tensor::scalar(2.0));
  CHECK(total_loss(g, terms, w).value().item() == doctest::Approx(15.4).epsilon(1e-14));

  // Class and box terms have no inputs here, so their weights change nothing.
  LossWeights full{.sem = 1, .cls = 1, .box = 0.5, .traj = 15, .nll = 0.2};
  CHECK(total_loss(g, terms, full).value().item() == doctest::Approx(15.4).epsilon(1e-14));

  LossWeights zero{.sem = 0, .cls = 0, .box = 0, .traj = 0, .nll = 0};
  CHECK_NOTHROW(zero.validate());
  terms.sem = g.constant(Tensor::scalar(3.0));
  CHECK(total_loss(g, terms, zero).value().item() == 0.0);
  CHECK(total_loss(g, LossTerms{}, full).value().item() == 0.0);

  LossWeights bad = full;
  bad.nll = -0.1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("config parsing") {
  SUBCASE("explicit loss weights verbatim") {
    const RunConfig c = parse_run_config(
        R"({"train": {"loss_weights": {"sem": 1, "class": 1, "box": 0.5, "traj": 15, "nll": 0.2}}})");
    CHECK(c.train.loss.sem == 1.0);
    CHECK(c.train.loss.cls == 1.0);
    CHECK(c.train.loss.box == 0.5);
    CHECK(c.train.loss.traj == 15.0);
    CHECK(c.train.loss.nll == 0.2);
  }
  SUBCASE("defaults") {
    const RunConfig c = parse_run_config("{}");
    CHECK(c.train.lr == 2e-4);
    CHECK(c.train.weight_decay == 1e-4);
    CHECK(c.train.batch_size == 32);
    CHECK(c.train.grad_clip == 5.0);
    CHECK(c.train.routing == RoutingMode::kIntrinsic);
  }
  SUBCASE("unknown keys and bad types") {
    CHECK_THROWS_AS(parse_run_config(R"({"trian": {}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"train": {"learning_rate": 0.1}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"train": {"loss_weights": {"kl": 1}}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"train": {"batch_size": "32"}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"train": {"batch_size": 0}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"train": {"batch_size": -4}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"model": {"d_model": 30, "heads": 4}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[1, 2"), ConfigError);
  }
  SUBCASE("routing modes and ablations") {
    RunConfig c = parse_run_config(R"({"train": {"routing_mode": "fixed-expert-3", "ablations": ["no_moe"]}})");
    CHECK(c.train.routing == RoutingMode::kFixed);
    CHECK(c.train.fixed_expert == 3);
    CHECK(c.train.ablations.no_moe);
    CHECK_FALSE(c.model_config().planner.use_moe);
    CHECK_THROWS_AS(parse_run_config(R"({"train": {"routing_mode": "fixed-expert-9"}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"train": {"routing_mode": "random"}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"train": {"ablations": ["no_attention"]}})"), ConfigError);
  }
  SUBCASE("dump round trip keeps the hash") {
    RunConfig c = tiny_config();
    c.train.routing = RoutingMode::kCommand;
    c.train.ablations.no_ar = true;
    c.data.mismatch_rate = 0.1;
    const RunConfig back = parse_run_config(dump_run_config(c));
    CHECK(config_hash(back) == config_hash(c));
    CHECK(config_hash(c).size() == 16);
    c.train.seed += 1;
    CHECK(config_hash(back) != config_hash(c));
  }
}

TEST_CASE("weight decay audit") {
  ParameterSet params;
  build_model(params, tiny_config());
  std::size_t decayed = 0;
  for (const Parameter& p : params) {
    const bool weight = p.name.size() > 7 && p.name.compare(p.name.size() - 7, 7, ".weight") == 0;
    INFO(p.name);
    CHECK(p.decay == weight);
    decayed += p.decay ? 1 : 0;
  }
  CHECK(decayed > 0);
  for (const char* name : {"planner.te_table", "planner.pe_table", "planner.start_tokens", "refiner.constraint_raw",
                           "refiner.point_pos"}) {
    INFO(name);
    REQUIRE(params.find(name) != nullptr);
    CHECK_FALSE(params.find(name)->decay);
  }
}

TEST_CASE("AdamW step against a hand computation") {
  ParameterSet params;
  Parameter& w = params.add("w", Tensor(Shape{2}, std::vector<double>{1.0, -2.0}), true);
  Parameter& b = params.add("b", Tensor(Shape{1}, std::vector<double>{0.5}), false);
  AdamW opt(params, AdamWConfig{.lr = 0.1, .weight_decay = 0.01});
  w.grad = Tensor(Shape{2}, std::vector<double>{0.5, -0.25});
  b.grad = Tensor(Shape{1}, std::vector<double>{2.0});
  opt.step();
  // First step: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps).
  auto expect = [](double p, double g, double decay) {
    return p - 0.1 * decay * p - 0.1 * g / (std::abs(g) + 1e-8);
  };
  CHECK(w.value[0] == doctest::Approx(expect(1.0, 0.5, 0.01)).epsilon(1e-14));
  CHECK(w.value[1] == doctest::Approx(expect(-2.0, -0.25, 0.01)).epsilon(1e-14));
  CHECK(b.value[0] == doctest::Approx(expect(0.5, 2.0, 0.0)).epsilon(1e-14));

  // Second step with a zero gradient follows the moment recurrences.
  const double w0 = w.value[0];
  w.grad[0] = 0.0;
  opt.step([](const Parameter& p) { return p.name == "w"; });
  const double m_hat = 0.9 * (0.1 * 0.5) / (1 - 0.9 * 0.9);
  const double v_hat = 0.999 * (0.001 * 0.25) / (1 - 0.999 * 0.999);
  CHECK(w.value[0] == doctest::Approx(w0 - 0.1 * 0.01 * w0 - 0.1 * m_hat / (std::sqrt(v_hat) + 1e-8)).epsilon(1e-12));
  CHECK(b.value[0] == doctest::Approx(expect(0.5, 2.0, 0.0)).epsilon(1e-14));  // filtered out
}

TEST_CASE("gradient clipping") {
  ParameterSet params;
  Parameter& a = params.add("a", Tensor(Shape{2}, 0.0));
  Parameter& b = params.add("b", Tensor(Shape{1}, 0.0));
  a.grad = Tensor(Shape{2}, std::vector<double>{3.0, 0.0});
  b.grad = Tensor(Shape{1}, std::vector<double>{4.0});
  CHECK(clip_grad_norm(params, 10.0) == doctest::Approx(5.0));
  CHECK(a.grad[0] == 3.0);
  CHECK(clip_grad_norm(params, 1.0) == doctest::Approx(5.0));
  CHECK(a.grad[0] == doctest::Approx(0.6).epsilon(1e-14));
  CHECK(b.grad[0] == doctest::Approx(0.8).epsilon(1e-14));
  CHECK(clip_grad_norm(params, 1.0, [](const Parameter& p) { return p.name == "a"; }) == doctest::Approx(0.6));
}

TEST_CASE("semantic labels follow the head's token and cell order") {
  const Dataset d = generate_dataset(2, 11, 0.0);
  std::vector<const Scene*> ptrs = {&d.scenes[0], &d.scenes[1]};
  const Batch b = make_batch(ptrs);
  constexpr std::size_t n = MapGrid::kCells;
  REQUIRE(b.semantic_labels.size() == 2 * n * n);
  for (std::size_t s = 0; s < 2; ++s) {
    for (std::size_t ix = 0; ix < n; ++ix) {
      for (std::size_t iy = 0; iy < n; ++iy) {
        const std::size_t token = (ix / 4) * 8 + iy / 4;
        const std::size_t local = (ix % 4) * 4 + iy % 4;
        const std::size_t row = (s * 64 + token) * 16 + local;
        REQUIRE(b.semantic_labels[row] == static_cast<int>(d.scenes[s].semantic_map[ix * n + iy]));
      }
    }
  }
}

TEST_CASE("without the NLL term the sigma outputs get no gradient") {
  RunConfig cfg = tiny_config();
  ParameterSet params;
  Model model = build_model(params, cfg);
  const Dataset d = generate_dataset(3, 5, 0.0);
  std::vector<const Scene*> ptrs = {&d.scenes[0], &d.scenes[1], &d.scenes[2]};
  const Batch batch = make_batch(ptrs);

  auto head_grads = [&](double nll) {
    LossWeights w = cfg.train.loss;
    w.nll = nll;
    params.zero_grad();
    Graph g;
    BatchLosses l = compute_losses(g, model.forward(g, batch), batch, w);
    CHECK(l.nll.has_value() == (nll != 0.0));
    g.backward(l.total);
    const Parameter* wt = params.find("planner.head.1.weight");
    const Parameter* bs = params.find("planner.head.1.bias");
    REQUIRE(wt != nullptr);
    REQUIRE(bs != nullptr);
    const std::size_t out = wt->value.shape()[1];
    REQUIRE(out == 6);
    double sigma_abs = 0.0;
    double mu_abs = 0.0;
    for (std::size_t i = 0; i < wt->grad.size(); ++i) {
      (i % out >= 3 ? sigma_abs : mu_abs) += std::abs(wt->grad[i]);
    }
    for (std::size_t j = 0; j < 6; ++j) {
      (j >= 3 ? sigma_abs : mu_abs) += std::abs(bs->grad[j]);
    }
    return std::pair{sigma_abs, mu_abs};
  };
  auto [sigma0, mu0] = head_grads(0.0);
  CHECK(sigma0 == 0.0);
  CHECK(mu0 > 0.0);
  auto [sigma1, mu1] = head_grads(0.2);
  CHECK(sigma1 > 0.0);
}

TEST_CASE("perception stage touches only perception parameters") {
  TinyRun run;
  run.cfg.train.epochs = 0;
  ParameterSet params;
  Model model = build_model(params, run.cfg);
  std::vector<Tensor> before;
  for (const Parameter& p : params) {
    before.push_back(p.value);
  }
  const TrainReport rep = train(model, params, run.train_set.scenes, run.val_set.scenes, run.cfg);
  REQUIRE(rep.epochs.size() == 1);
  CHECK(rep.epochs[0].stage == 1);
  CHECK(std::isnan(rep.epochs[0].train_l1));
  std::size_t i = 0;
  std::size_t changed = 0;
  for (const Parameter& p : params) {
    INFO(p.name);
    if (Model::is_perception_parameter(p)) {
      changed += p.value == before[i] ? 0 : 1;
    } else {
      CHECK(p.value == before[i]);
    }
    ++i;
  }
  CHECK(changed > 0);
}

TEST_CASE("training is deterministic and keeps the best epoch") {
  TinyRun run;
  run.cfg.train.epochs = 3;
  auto once = [&]() {
    ParameterSet params;
    Model model = build_model(params, run.cfg);
    TrainReport rep = train(model, params, run.train_set.scenes, run.val_set.scenes, run.cfg);
    const EvalResult ev = evaluate(model, run.val_set.scenes, run.cfg.score);
    return std::tuple{rep, serialize_checkpoint(run.cfg, params, rep.best_epoch), ev};
  };
  auto [rep1, ckpt1, ev1] = once();
  auto [rep2, ckpt2, ev2] = once();
  REQUIRE(rep1.epochs.size() == 4);
  CHECK(ckpt1 == ckpt2);
  for (std::size_t e = 0; e < rep1.epochs.size(); ++e) {
    CHECK(rep1.epochs[e].train_loss == rep2.epochs[e].train_loss);
    CHECK(rep1.epochs[e].val_l1 == rep2.epochs[e].val_l1);
    if (e > 0) {
      CHECK(rep1.epochs[e].best_val_l1 <= rep1.epochs[e - 1].best_val_l1);
    }
    CHECK(rep1.epochs[e].best_val_l1 <= rep1.epochs[e].val_l1);
  }
  REQUIRE(rep1.best_epoch >= 1);
  // The restored parameters reproduce the best validation L1.
  CHECK(ev1.mean_l1 == doctest::Approx(rep1.epochs[rep1.best_epoch - 1].val_l1).epsilon(1e-12));
  const EvalResult base = evaluate_baseline(run.val_set.scenes, run.cfg.score);
  CHECK(eval_csv(ev1, base, run.val_set.scenes, rep1.config_hash) ==
        eval_csv(ev2, base, run.val_set.scenes, rep2.config_hash));
}

TEST_CASE("non-finite loss names the epoch and batch") {
  TinyRun run;
  run.cfg.train.stage1_epochs = 0;
  ParameterSet params;
  Model model = build_model(params, run.cfg);
  params.find("planner.head.1.bias")->value[0] = std::nan("");
  try {
    train(model, params, run.train_set.scenes, run.val_set.scenes, run.cfg);
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch 1") != std::string::npos);
    CHECK(msg.find("batch 0") != std::string::npos);
  }
}

TEST_CASE("evaluation") {
  TinyRun run;
  ParameterSet params;
  Model model = build_model(params, run.cfg);
  const EvalResult a = evaluate(model, run.val_set.scenes, run.cfg.score, 3);
  const EvalResult b = evaluate(model, run.val_set.scenes, run.cfg.score, 1);
  REQUIRE(a.per_scene.size() == run.val_set.scenes.size());
  for (std::size_t i = 0; i < a.trajectories.size(); ++i) {
    for (std::size_t t = 0; t < kHorizon; ++t) {
      CHECK(a.trajectories[i][t].x == b.trajectories[i][t].x);
      CHECK(a.trajectories[i][t].heading == b.trajectories[i][t].heading);
      CHECK(std::abs(a.trajectories[i][t].heading) <= std::numbers::pi);
    }
    CHECK(a.per_scene[i].pdms == b.per_scene[i].pdms);
  }
  const EvalResult base = evaluate_baseline(run.val_set.scenes, run.cfg.score);
  for (std::size_t i = 0; i < run.val_set.scenes.size(); ++i) {
    const Scene& s = run.val_set.scenes[i];
    const Trajectory cv = constant_velocity_baseline(s.ego);
    CHECK(base.per_scene[i].pdms == score_trajectory(cv, s, run.cfg.score).pdms);
    CHECK(base.l1[i] == trajectory_l1(cv, s.gt));
  }
  const std::string csv = eval_csv(a, base, run.val_set.scenes, "abc");
  CHECK(csv.rfind(std::string("# ") + kToolVersion + " config_hash=abc\n", 0) == 0);
  CHECK(csv.find("\nbaseline_cv,") != std::string::npos);
}

TEST_CASE("checkpoint round trip and validation") {
  TinyRun run;
  ParameterSet params;
  build_model(params, run.cfg);
  Rng rng(4);
  for (Parameter& p : params) {
    p.value = random_tensor(p.value.shape(), rng);
  }
  const std::vector<char> bytes = serialize_checkpoint(run.cfg, params, 7);
  const Checkpoint c = deserialize_checkpoint(bytes);
  CHECK(c.epoch == 7);
  CHECK(c.config_hash == config_hash(run.cfg));
  CHECK(config_hash(c.config) == config_hash(run.cfg));

  ParameterSet fresh;
  build_model(fresh, c.config);
  restore_parameters(c, fresh);
  auto it = params.begin();
  for (const Parameter& p : fresh) {
    CHECK(p.value == (it++)->value);
  }

  auto replace = [&](const std::string& from, const std::string& to) {
    REQUIRE(from.size() == to.size());
    std::vector<char> copy = bytes;
    std::string s(copy.begin(), copy.end());
    const auto pos = s.find(from);
    REQUIRE(pos != std::string::npos);
    std::copy(to.begin(), to.end(), copy.begin() + static_cast<std::ptrdiff_t>(pos));
    return copy;
  };
  CHECK_THROWS_AS(deserialize_checkpoint(replace(c.config_hash, std::string(16, '0'))), FormatError);
  CHECK_THROWS_AS(deserialize_checkpoint(replace(kToolVersion, "artemis 9.9.9")), VersionError);
  std::vector<char> cut(bytes.begin(), bytes.end() - 8);
  CHECK_THROWS_AS(deserialize_checkpoint(cut), FormatError);
  std::vector<char> bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(deserialize_checkpoint(bad), FormatError);

  RunConfig wider = run.cfg;
  wider.model.d_model = 16;
  ParameterSet other;
  build_model(other, wider);
  CHECK_THROWS_AS(restore_parameters(c, other), FormatError);
}
