// artemis: data generation, training, evaluation and the dispatch benchmark.

#include <fmt/format.h>

#include <CLI11.hpp>
#include <array>
#include <cstdio>
#include <optional>

#include "artemis/common/errors.hpp"
#include "artemis/common/hash.hpp"
#include "artemis/moe/bench.hpp"
#include "artemis/scene/dataset_io.hpp"
#include "artemis/training/trainer.hpp"

using namespace artemis;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitIo = 4;

std::string read_text(const std::string& path) {
  const std::vector<char> bytes = read_file(path);
  return {bytes.begin(), bytes.end()};
}

void write_text(const std::string& path, const std::string& text) { write_file(path, {text.begin(), text.end()}); }

struct GenArgs {
  std::size_t n = 512;
  std::uint64_t seed = 7;
  double mismatch_rate = 0.0;
  std::size_t d_feat = kDefaultFeatureDim;
  std::string out;
};

int gen_data(const GenArgs& a) {
  if (a.n == 0) {
    throw ConfigError("gen-data: --n must be at least 1");
  }
  GeneratorConfig gc;
  gc.d_feat = a.d_feat;
  const Dataset d = generate_dataset(a.n, a.seed, a.mismatch_rate, gc);
  save_dataset(d, a.out);

  std::array<std::size_t, kNumSceneKinds> kinds{};
  std::array<std::size_t, 3> behaviors{};
  std::size_t mismatched = 0;
  for (const Scene& s : d.scenes) {
    ++kinds[static_cast<std::size_t>(s.kind)];
    ++behaviors[static_cast<std::size_t>(s.behavior)];
    mismatched += s.command_mismatch ? 1 : 0;
  }
  fmt::print("{} config_hash={}\nwrote {} scenes to {}\n", kToolVersion, d.config_hash(), d.scenes.size(), a.out);
  for (std::size_t k = 0; k < kNumSceneKinds; ++k) {
    fmt::print("  {:<13} {}\n", to_string(static_cast<SceneKind>(k)), kinds[k]);
  }
  fmt::print("  behaviors straight/left/right {}/{}/{}, mismatched commands {}\n", behaviors[0], behaviors[1],
             behaviors[2], mismatched);
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string data;
  std::string val;
  std::string out;
  std::string report;
  std::vector<std::string> ablate;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<double> lr;
  std::optional<std::string> routing;
  bool quiet = false;
};

RunConfig load_config(const std::string& path) { return path.empty() ? RunConfig{} : parse_run_config(read_text(path)); }

int train_cmd(const TrainArgs& a) {
  RunConfig cfg = load_config(a.config);
  if (a.seed) {
    cfg.train.seed = *a.seed;
  }
  if (a.epochs) {
    cfg.train.epochs = *a.epochs;
  }
  if (a.batch_size) {
    cfg.train.batch_size = *a.batch_size;
  }
  if (a.lr) {
    cfg.train.lr = *a.lr;
  }
  if (a.routing) {
    parse_routing_mode(*a.routing, cfg.train.routing, cfg.train.fixed_expert);
  }
  for (const std::string& name : a.ablate) {
    apply_ablation(cfg.train.ablations, name);
  }

  Dataset train_set;
  if (a.data.empty()) {
    cfg.validate();
    train_set = generate_dataset(cfg.data.n, cfg.data.seed, cfg.data.mismatch_rate);
  } else {
    train_set = load_dataset(a.data);
    cfg.data.n = train_set.scenes.size();
    cfg.data.seed = train_set.seed;
    cfg.data.mismatch_rate = train_set.mismatch_rate;
  }
  Dataset val_set;
  if (a.val.empty()) {
    cfg.validate();
    val_set = generate_dataset(cfg.data.val_n, cfg.data.val_seed, cfg.data.mismatch_rate);
  } else {
    val_set = load_dataset(a.val);
    cfg.data.val_n = val_set.scenes.size();
    cfg.data.val_seed = val_set.seed;
  }
  cfg.validate();
  if (train_set.d_feat != cfg.model.d_feat) {
    throw ConfigError(fmt::format("train: data has d_feat {}, config expects {}", train_set.d_feat, cfg.model.d_feat));
  }

  const std::string hash = config_hash(cfg);
  fmt::print("{} config_hash={}\n", kToolVersion, hash);
  ParameterSet params;
  Model model = build_model(params, cfg);
  fmt::print("{} parameters, {} training scenes, {} validation scenes\n", params.numel(), train_set.scenes.size(),
             val_set.scenes.size());
  std::fflush(stdout);
  const TrainReport report = train(model, params, train_set.scenes, val_set.scenes, cfg, [&](const EpochRecord& e) {
    if (!a.quiet) {
      fmt::print("epoch {:3d} stage {} loss {:10.4f} train_l1 {:8.4f} val_l1 {:8.4f} ({:.1f}s)\n", e.epoch, e.stage,
                 e.train_loss, e.train_l1, e.val_l1, e.seconds);
      std::fflush(stdout);
    }
  });
  save_checkpoint(a.out, cfg, params, report.best_epoch);
  const std::string report_path = a.report.empty() ? a.out + ".report.csv" : a.report;
  write_text(report_path, report_csv(report));
  fmt::print("best epoch {} (val_l1 {:.4f}), {:.1f} samples/s\ncheckpoint {}\nreport {}\n", report.best_epoch,
             report.epochs.empty() ? 0.0 : report.epochs.back().best_val_l1, report.samples_per_sec, a.out,
             report_path);
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string config;
  std::string out;
};

int eval_cmd(const EvalArgs& a) {
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  if (!a.config.empty()) {
    const std::string expected = config_hash(load_config(a.config));
    if (expected != ckpt.config_hash) {
      throw ConfigError(fmt::format("eval: checkpoint config hash {} does not match {} ({})", ckpt.config_hash,
                                    expected, a.config));
    }
  }
  const RunConfig& cfg = ckpt.config;
  const Dataset data = a.data.empty() ? generate_dataset(cfg.data.val_n, cfg.data.val_seed, cfg.data.mismatch_rate)
                                      : load_dataset(a.data);
  ParameterSet params;
  Model model = build_model(params, cfg);
  restore_parameters(ckpt, params);

  const EvalResult result = evaluate(model, data.scenes, cfg.score);
  const EvalResult baseline = evaluate_baseline(data.scenes, cfg.score);
  const std::string csv = eval_csv(result, baseline, data.scenes, ckpt.config_hash);
  if (!a.out.empty()) {
    write_text(a.out, csv);
  }
  fmt::print("{} config_hash={} epoch={}\n", kToolVersion, ckpt.config_hash, ckpt.epoch);
  auto line = [](const char* label, const EvalResult& r) {
    fmt::print("{:<12} pdms {:.4f}  nc {:.3f} dac {:.3f} ep {:.3f} ttc {:.3f} c {:.3f}  l1 {:.4f}\n", label, r.mean.pdms,
               r.mean.nc, r.mean.dac, r.mean.ep, r.mean.ttc, r.mean.c, r.mean_l1);
  };
  line("model", result);
  line("baseline_cv", baseline);
  return 0;
}

struct BenchArgs {
  std::vector<std::size_t> batch_sizes = {1, 64, 128, 256};
  std::size_t repeats = 5;
  std::size_t warmup = 1;
  bool forward_only = false;
  std::string out;
};

int bench_cmd(const BenchArgs& a) {
  BenchConfig bc;
  bc.batch_sizes = a.batch_sizes;
  bc.repeats = a.repeats;
  bc.warmup = a.warmup;
  bc.backward = !a.forward_only;
  const std::string desc =
      fmt::format("n_private={};n_shared={};k={};d_model={};c_bev={};tokens={};backward={};batches={}",
                  bc.moe.n_private, bc.moe.n_shared, bc.moe.k, bc.moe.d_model, bc.c_bev, bc.tokens, bc.backward,
                  fmt::join(bc.batch_sizes, ","));
  const std::string hash = fmt::format("{:016x}", fnv1a(desc));
  const std::vector<BenchRow> rows = bench_dispatch(bc);

  std::string text = fmt::format("# {} config_hash={}\n", kToolVersion, hash);
  text += bench_csv(rows);
  std::optional<double> at128;
  for (const BenchRow& r : rows) {
    if (r.batch_size == 128 && r.mode == "grouped") {
      at128 = r.speedup;
    }
  }
  std::string verdict = "not measured (B=128 absent)";
  if (at128) {
    verdict = fmt::format("{} (speedup {:.2f}x at B=128, bar 3x)", *at128 >= 3.0 ? "PASS" : "FAIL", *at128);
  }
  text += fmt::format("# acceptance: {}\n", verdict);
  text += "# reference speedup factors: 7.31 (B=64), 21.97 (B=128), 26.2 (B=256)\n";
  if (!a.out.empty()) {
    write_text(a.out, text);
  }
  fmt::print("{}", text);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Autoregressive mixture-of-experts trajectory planner"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic scene dataset");
  g->add_option("--n", gen.n, "Number of scenes")->capture_default_str();
  g->add_option("--seed", gen.seed, "Dataset seed")->capture_default_str();
  g->add_option("--mismatch-rate", gen.mismatch_rate, "Probability a scene's command is replaced")
      ->capture_default_str();
  g->add_option("--d-feat", gen.d_feat, "BEV token width")->capture_default_str();
  g->add_option("--out", gen.out, "Output file")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model (perception stage, then end to end)");
  t->add_option("--config", tr.config, "JSON run configuration");
  t->add_option("--data", tr.data, "Training dataset (default: generated from the config)");
  t->add_option("--val", tr.val, "Validation dataset (default: generated from the config)");
  t->add_option("--out", tr.out, "Checkpoint file")->required();
  t->add_option("--report", tr.report, "Per-epoch CSV (default: <out>.report.csv)");
  t->add_option("--ablate", tr.ablate, "no_moe, no_ar or no_refine (repeatable)");
  t->add_option("--seed", tr.seed, "Override train.seed");
  t->add_option("--epochs", tr.epochs, "Override train.epochs");
  t->add_option("--batch-size", tr.batch_size, "Override train.batch_size");
  t->add_option("--lr", tr.lr, "Override train.lr");
  t->add_option("--routing", tr.routing, "intrinsic, command or fixed-expert-<e>");
  t->add_flag("--quiet", tr.quiet, "No per-epoch lines");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score a checkpoint and the constant-velocity baseline");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  e->add_option("--data", ev.data, "Dataset (default: the checkpoint config's validation set)");
  e->add_option("--config", ev.config, "Refuse to run unless the checkpoint was trained with this config");
  e->add_option("--out", ev.out, "Per-scene CSV");

  BenchArgs bench;
  auto* b = app.add_subcommand("bench-dispatch", "Time grouped against per-sample expert dispatch");
  b->add_option("--batch-sizes", bench.batch_sizes, "Batch sizes")->delimiter(',')->capture_default_str();
  b->add_option("--repeats", bench.repeats, "Timed repeats per point (median)")->capture_default_str();
  b->add_option("--warmup", bench.warmup, "Untimed warmup runs")->capture_default_str();
  b->add_flag("--forward-only", bench.forward_only, "Time inference only");
  b->add_option("--out", bench.out, "CSV output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*g) {
      return gen_data(gen);
    }
    if (*t) {
      return train_cmd(tr);
    }
    if (*e) {
      return eval_cmd(ev);
    }
    return bench_cmd(bench);
  } catch (const ConfigError& err) {
    fmt::print(stderr, "error: {}\n", err.what());
    return kExitConfig;
  } catch (const DivergenceError& err) {
    fmt::print(stderr, "error: {}\n", err.what());
    return kExitDivergence;
  } catch (const IoError& err) {
    fmt::print(stderr, "error: {}\n", err.what());
    return kExitIo;
  } catch (const FormatError& err) {
    fmt::print(stderr, "error: {}\n", err.what());
    return kExitIo;
  } catch (const std::exception& err) {
    fmt::print(stderr, "error: {}\n", err.what());
    return 1;
  }
}
