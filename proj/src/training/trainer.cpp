#include "artemis/training/trainer.hpp"

#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <json.hpp>
#include <limits>
#include <numeric>

#include "artemis/common/angles.hpp"
#include "artemis/common/errors.hpp"
#include "artemis/training/optimizer.hpp"

namespace artemis {

namespace {

constexpr std::string_view kMagic = "ARTCKP01";
constexpr std::uint64_t kShuffleStream = 0x5f1e;
constexpr std::uint64_t kInitStream = 0x1a17;

using Filter = std::function<bool(const Parameter&)>;

std::vector<const Scene*> pointers(std::span<const Scene> scenes, std::span<const std::size_t> idx) {
  std::vector<const Scene*> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) {
    out.push_back(&scenes[i]);
  }
  return out;
}

Trajectory row_trajectory(const Tensor& t, std::size_t b) {
  Trajectory traj;
  for (std::size_t i = 0; i < kHorizon; ++i) {
    const double* p = t.data().data() + (b * kHorizon + i) * 3;
    traj[i] = Pose{p[0], p[1], p[2]};
  }
  return traj;
}

std::vector<Trajectory> predict(const Model& model, std::span<const Scene> scenes, std::size_t batch_size) {
  std::vector<Trajectory> out;
  out.reserve(scenes.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < scenes.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, scenes.size() - start);
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), start);
    const auto ptrs = pointers(scenes, idx);
    Batch b = make_batch(ptrs);
    Graph g(false);
    const Tensor& y = model.forward(g, b).trajectory.value();
    for (std::size_t s = 0; s < n; ++s) {
      out.push_back(row_trajectory(y, s));
    }
  }
  return out;
}

double mean_l1(const Model& model, std::span<const Scene> scenes, std::size_t batch_size) {
  const auto trajs = predict(model, scenes, batch_size);
  double sum = 0.0;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    sum += trajectory_l1(trajs[i], scenes[i].gt);
  }
  return sum / static_cast<double>(scenes.size());
}

EvalResult score_all(std::vector<Trajectory> trajs, std::span<const Scene> scenes, const ScoreConfig& score) {
  EvalResult r;
  double l1 = 0.0;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    r.per_scene.push_back(score_trajectory(trajs[i], scenes[i], score));
    r.l1.push_back(trajectory_l1(trajs[i], scenes[i].gt));
    l1 += r.l1.back();
  }
  r.trajectories = std::move(trajs);
  r.mean = mean_scores(r.per_scene);
  r.mean_l1 = scenes.empty() ? 0.0 : l1 / static_cast<double>(scenes.size());
  return r;
}

std::vector<Tensor> snapshot(const ParameterSet& params) {
  std::vector<Tensor> out;
  for (const Parameter& p : params) {
    out.push_back(p.value);
  }
  return out;
}

std::string num(double v) { return fmt::format("{:.17g}", v); }

}  // namespace

double TrainReport::first_l1() const {
  for (const EpochRecord& e : epochs) {
    if (e.stage == 2) {
      return e.train_l1;
    }
  }
  return std::numeric_limits<double>::quiet_NaN();
}

double TrainReport::final_l1() const {
  return epochs.empty() || epochs.back().stage != 2 ? std::numeric_limits<double>::quiet_NaN()
                                                     : epochs.back().train_l1;
}

double trajectory_l1(const Trajectory& a, const Trajectory& b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < kHorizon; ++i) {
    sum += std::abs(a[i].x - b[i].x) + std::abs(a[i].y - b[i].y) + std::abs(wrap_to_pi(a[i].heading - b[i].heading));
  }
  return sum / (3.0 * kHorizon);
}

Model build_model(ParameterSet& params, const RunConfig& cfg) {
  Rng rng(mix_seed(cfg.train.seed, kInitStream));
  return Model::create(params, cfg.model_config(), rng);
}

TrainReport train(const Model& model, ParameterSet& params, std::span<const Scene> train_set,
                  std::span<const Scene> val_set, const RunConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.empty() || val_set.empty()) {
    throw ConfigError("train: training and validation sets must be non-empty");
  }
  const TrainSection& tc = cfg.train;
  AdamW opt(params, AdamWConfig{.lr = tc.lr, .weight_decay = tc.weight_decay});
  const Filter perception = [](const Parameter& p) { return Model::is_perception_parameter(p); };
  const std::size_t stage1 = tc.loss.sem > 0.0 ? tc.stage1_epochs : 0;

  TrainReport report;
  report.config_hash = config_hash(cfg);
  std::vector<std::size_t> order(train_set.size());
  std::vector<Tensor> best_values;
  double best = std::numeric_limits<double>::infinity();
  std::size_t samples = 0;
  double busy = 0.0;

  for (std::size_t epoch = 1; epoch <= stage1 + tc.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const bool perception_only = epoch <= stage1;
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(mix_seed(tc.seed, kShuffleStream), epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.index(i)]);
    }

    double loss_sum = 0.0;
    double l1_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size, ++batch_index) {
      const std::size_t n = std::min(tc.batch_size, order.size() - start);
      const auto ptrs = pointers(train_set, std::span(order).subspan(start, n));
      Batch batch = make_batch(ptrs);
      Graph g;
      Var loss;
      if (perception_only) {
        loss = scale(cross_entropy(model.semantic_logits(g, batch), batch.semantic_labels), tc.loss.sem);
      } else {
        BatchLosses l = compute_losses(g, model.forward(g, batch), batch, tc.loss);
        loss = l.total;
        l1_sum += l.l1.value()[0] * static_cast<double>(n);
      }
      const double value = loss.value()[0];
      if (!std::isfinite(value)) {
        throw DivergenceError(fmt::format("train: non-finite loss at epoch {} batch {}", epoch, batch_index));
      }
      params.zero_grad();
      g.backward(loss);
      const Filter& filter = perception_only ? perception : Filter{};
      const double norm = clip_grad_norm(params, tc.grad_clip, filter);
      if (!std::isfinite(norm)) {
        throw DivergenceError(fmt::format("train: non-finite gradient at epoch {} batch {}", epoch, batch_index));
      }
      opt.step(filter);
      loss_sum += value * static_cast<double>(n);
      samples += n;
    }
    busy += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    EpochRecord rec;
    rec.epoch = epoch;
    rec.stage = perception_only ? 1 : 2;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.train_l1 = perception_only ? std::numeric_limits<double>::quiet_NaN()
                                   : l1_sum / static_cast<double>(order.size());
    rec.val_l1 = mean_l1(model, val_set, 64);
    if (!std::isfinite(rec.val_l1)) {
      throw DivergenceError(fmt::format("train: non-finite validation L1 after epoch {}", epoch));
    }
    if (rec.val_l1 < best) {
      best = rec.val_l1;
      best_values = snapshot(params);
      report.best_epoch = epoch;
    }
    rec.best_val_l1 = best;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.epochs.push_back(rec);
    if (on_epoch) {
      on_epoch(rec);
    }
  }
  if (!best_values.empty()) {
    std::size_t i = 0;
    for (Parameter& p : params) {
      p.value = best_values[i++];
    }
  }
  report.samples_per_sec = busy > 0.0 ? static_cast<double>(samples) / busy : 0.0;
  return report;
}

EvalResult evaluate(const Model& model, std::span<const Scene> scenes, const ScoreConfig& score,
                    std::size_t batch_size) {
  if (batch_size == 0) {
    throw ConfigError("evaluate: batch size must be at least 1");
  }
  return score_all(predict(model, scenes, batch_size), scenes, score);
}

EvalResult evaluate_baseline(std::span<const Scene> scenes, const ScoreConfig& score) {
  std::vector<Trajectory> trajs;
  for (const Scene& s : scenes) {
    trajs.push_back(constant_velocity_baseline(s.ego));
  }
  return score_all(std::move(trajs), scenes, score);
}

std::vector<char> serialize_checkpoint(const RunConfig& cfg, const ParameterSet& params, std::size_t epoch) {
  nlohmann::ordered_json header;
  header["version"] = kToolVersion;
  header["config_hash"] = config_hash(cfg);
  header["config"] = nlohmann::ordered_json::parse(dump_run_config(cfg, -1));
  header["epoch"] = epoch;
  header["seed"] = cfg.train.seed;
  auto list = nlohmann::ordered_json::array();
  for (const Parameter& p : params) {
    list.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"decay", p.decay}});
  }
  header["parameters"] = list;
  const std::string text = header.dump();

  ByteWriter w;
  w.put_bytes(kMagic);
  w.put(static_cast<std::uint32_t>(text.size()));
  w.put_bytes(text);
  for (const Parameter& p : params) {
    w.put_array(p.value.data().data(), p.value.size());
  }
  return std::move(w.bytes());
}

Checkpoint deserialize_checkpoint(const std::vector<char>& bytes) {
  ByteReader r(bytes.data(), bytes.size(), "checkpoint");
  if (r.get_bytes(kMagic.size()) != kMagic) {
    throw FormatError("checkpoint: bad magic");
  }
  const auto len = r.get<std::uint32_t>();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.get_bytes(len));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("checkpoint: bad header: ") + e.what());
  }
  Checkpoint c;
  try {
    const std::string version = header.at("version").get<std::string>();
    if (version != kToolVersion) {
      throw VersionError("checkpoint: written by '" + version + "', this is '" + kToolVersion + "'");
    }
    c.config = parse_run_config(header.at("config").dump());
    c.config_hash = header.at("config_hash").get<std::string>();
    c.epoch = header.at("epoch").get<std::size_t>();
    if (c.config_hash != config_hash(c.config)) {
      throw FormatError("checkpoint: config hash " + c.config_hash + " does not match its config");
    }
    for (const auto& p : header.at("parameters")) {
      Shape shape = p.at("shape").get<Shape>();
      const std::size_t n = shape_numel(shape);
      if (n > r.remaining() / sizeof(double)) {
        throw FormatError("checkpoint: parameter data truncated");
      }
      std::vector<double> values(n);
      r.get_array(values.data(), n);
      c.parameters.emplace_back(p.at("name").get<std::string>(), Tensor(std::move(shape), std::move(values)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad header: ") + e.what());
  }
  if (r.remaining() != 0) {
    throw FormatError("checkpoint: " + std::to_string(r.remaining()) + " trailing bytes");
  }
  return c;
}

void save_checkpoint(const std::string& path, const RunConfig& cfg, const ParameterSet& params, std::size_t epoch) {
  write_file(path, serialize_checkpoint(cfg, params, epoch));
}

Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_file(path)); }

void restore_parameters(const Checkpoint& ckpt, ParameterSet& params) {
  if (ckpt.parameters.size() != params.size()) {
    throw FormatError(fmt::format("checkpoint: {} parameters, model has {}", ckpt.parameters.size(), params.size()));
  }
  for (const auto& [name, value] : ckpt.parameters) {
    Parameter* p = params.find(name);
    if (p == nullptr) {
      throw FormatError("checkpoint: unknown parameter '" + name + "'");
    }
    if (p->value.shape() != value.shape()) {
      throw FormatError("checkpoint: parameter '" + name + "' is " + shape_str(value.shape()) + ", model expects " +
                        shape_str(p->value.shape()));
    }
    p->value = value;
  }
}

std::string report_csv(const TrainReport& report) {
  std::string out = fmt::format("# {} config_hash={}\n", kToolVersion, report.config_hash);
  out += "epoch,stage,train_loss,train_l1,val_l1,best_val_l1,seconds\n";
  for (const EpochRecord& e : report.epochs) {
    out += fmt::format("{},{},{},{},{},{},{:.3f}\n", e.epoch, e.stage, num(e.train_loss), num(e.train_l1),
                       num(e.val_l1), num(e.best_val_l1), e.seconds);
  }
  out += fmt::format("# best_epoch={} samples_per_sec={:.2f}\n", report.best_epoch, report.samples_per_sec);
  return out;
}

std::string eval_csv(const EvalResult& model, const EvalResult& baseline, std::span<const Scene> scenes,
                     const std::string& config_hash) {
  auto row = [](std::string_view label, const SubScores& s, double l1) {
    return fmt::format("{},{},{},{},{},{},{},{}\n", label, num(s.nc), num(s.dac), num(s.ep), num(s.ttc), num(s.c),
                       num(s.pdms), num(l1));
  };
  std::string out = fmt::format("# {} config_hash={}\n", kToolVersion, config_hash);
  out += "scene,nc,dac,ep,ttc,c,pdms,l1\n";
  for (std::size_t i = 0; i < model.per_scene.size(); ++i) {
    out += row(fmt::format("{}:{}", i, to_string(scenes[i].kind)), model.per_scene[i], model.l1[i]);
  }
  out += row("mean", model.mean, model.mean_l1);
  out += row("baseline_cv", baseline.mean, baseline.mean_l1);
  return out;
}

}  // namespace artemis
