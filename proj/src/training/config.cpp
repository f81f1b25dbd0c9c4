#include "artemis/training/config.hpp"

#include <fmt/format.h>

#include <json.hpp>
#include <set>

#include "artemis/common/errors.hpp"
#include "artemis/common/hash.hpp"

namespace artemis {

using nlohmann::json;

namespace {

// Reads the keys of one section, rejecting anything it does not know.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) {
      throw ConfigError("config: section '" + name_ + "' must be an object");
    }
  }

  template <class T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) {
      return;
    }
    try {
      if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
        if (!it->is_number_unsigned()) {
          throw ConfigError("");
        }
      } else if constexpr (std::is_same_v<T, double>) {
        if (!it->is_number()) {
          throw ConfigError("");
        }
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!it->is_string()) {
          throw ConfigError("");
        }
      }
      out = it->get<T>();
    } catch (const std::exception&) {
      throw ConfigError(fmt::format("config: {}.{} has the wrong type ({})", name_, key, it->dump()));
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.contains(it.key())) {
        throw ConfigError("config: unknown key '" + name_ + "." + it.key() + "'");
      }
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

json to_json(const RunConfig& c) {
  json j;
  j["model"] = {{"d_model", c.model.d_model},
                {"heads", c.model.heads},
                {"encoder_layers", c.model.encoder_layers},
                {"d_feat", c.model.d_feat},
                {"n_private", c.model.n_private},
                {"n_shared", c.model.n_shared},
                {"k", c.model.k},
                {"refine_layers", c.model.refine_layers}};
  json abl = json::array();
  if (c.train.ablations.no_moe) {
    abl.push_back("no_moe");
  }
  if (c.train.ablations.no_ar) {
    abl.push_back("no_ar");
  }
  if (c.train.ablations.no_refine) {
    abl.push_back("no_refine");
  }
  const LossWeights& w = c.train.loss;
  j["train"] = {{"lr", c.train.lr},
                {"weight_decay", c.train.weight_decay},
                {"batch_size", c.train.batch_size},
                {"epochs", c.train.epochs},
                {"stage1_epochs", c.train.stage1_epochs},
                {"seed", c.train.seed},
                {"routing_mode", to_string(c.train.routing, c.train.fixed_expert)},
                {"ablations", abl},
                {"loss_weights", {{"sem", w.sem}, {"class", w.cls}, {"box", w.box}, {"traj", w.traj}, {"nll", w.nll}}},
                {"grad_clip", c.train.grad_clip}};
  j["data"] = {{"n", c.data.n},
               {"seed", c.data.seed},
               {"mismatch_rate", c.data.mismatch_rate},
               {"val_n", c.data.val_n},
               {"val_seed", c.data.val_seed}};
  j["score"] = {{"weights", {c.score.w_ep, c.score.w_ttc, c.score.w_c}},
                {"ttc_threshold", c.score.ttc_threshold},
                {"accel_max", c.score.accel_max},
                {"jerk_max", c.score.jerk_max}};
  return j;
}

}  // namespace

void ModelConfig::validate() const {
  planner.validate();
  refiner.validate();
  if (refiner.d_model != planner.d_model) {
    throw ConfigError("model: refiner and planner widths differ");
  }
  if (semantic_classes != 4) {
    throw ConfigError("model: the semantic head predicts exactly 4 classes");
  }
}

void RunConfig::validate() const {
  model_config().validate();
  if (train.batch_size == 0) {
    throw ConfigError("train.batch_size must be at least 1");
  }
  if (!(train.lr > 0.0) || !(train.weight_decay >= 0.0) || !(train.grad_clip > 0.0)) {
    throw ConfigError("train: lr and grad_clip must be positive, weight_decay nonnegative");
  }
  train.loss.validate();
  if (train.epochs > 0 && !(train.loss.traj > 0.0)) {
    throw ConfigError("train.loss_weights.traj must be positive for end-to-end training");
  }
  if (data.n == 0 || data.val_n == 0) {
    throw ConfigError("data: n and val_n must be at least 1");
  }
  if (!(data.mismatch_rate >= 0.0 && data.mismatch_rate <= 1.0)) {
    throw ConfigError("data.mismatch_rate must lie in [0, 1]");
  }
  if (!(score.w_ep > 0.0 && score.w_ttc > 0.0 && score.w_c > 0.0)) {
    throw ConfigError("score.weights must be positive");
  }
  if (!(score.ttc_threshold > 0.0 && score.accel_max > 0.0 && score.jerk_max > 0.0)) {
    throw ConfigError("score thresholds must be positive");
  }
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.planner.d_model = model.d_model;
  m.planner.heads = model.heads;
  m.planner.encoder_layers = model.encoder_layers;
  m.planner.d_feat = model.d_feat;
  m.planner.moe.n_private = model.n_private;
  m.planner.moe.n_shared = model.n_shared;
  m.planner.moe.k = model.k;
  m.planner.use_moe = !train.ablations.no_moe;
  m.planner.autoregressive = !train.ablations.no_ar;
  m.planner.routing = train.routing;
  m.planner.fixed_expert = train.fixed_expert;
  m.refiner.d_model = model.d_model;
  m.refiner.heads = model.heads;
  m.refiner.layers = model.refine_layers;
  m.use_refiner = !train.ablations.no_refine;
  return m;
}

std::string to_string(RoutingMode m, std::size_t fixed_expert) {
  switch (m) {
    case RoutingMode::kIntrinsic:
      return "intrinsic";
    case RoutingMode::kCommand:
      return "command";
    case RoutingMode::kFixed:
      return "fixed-expert-" + std::to_string(fixed_expert);
  }
  return "?";
}

void parse_routing_mode(const std::string& s, RoutingMode& mode, std::size_t& fixed_expert) {
  if (s == "intrinsic") {
    mode = RoutingMode::kIntrinsic;
    return;
  }
  if (s == "command") {
    mode = RoutingMode::kCommand;
    return;
  }
  const std::string prefix = "fixed-expert-";
  if (s.rfind(prefix, 0) == 0 && s.size() > prefix.size()) {
    const std::string num = s.substr(prefix.size());
    if (num.find_first_not_of("0123456789") == std::string::npos && num.size() < 6) {
      mode = RoutingMode::kFixed;
      fixed_expert = std::stoul(num);
      return;
    }
  }
  throw ConfigError("unknown routing mode '" + s + "' (intrinsic, command, fixed-expert-<e>)");
}

void apply_ablation(Ablations& a, const std::string& name) {
  if (name == "no_moe") {
    a.no_moe = true;
  } else if (name == "no_ar") {
    a.no_ar = true;
  } else if (name == "no_refine") {
    a.no_refine = true;
  } else {
    throw ConfigError("unknown ablation '" + name + "' (no_moe, no_ar, no_refine)");
  }
}

RunConfig parse_run_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  RunConfig c;
  Section top(root, "config");
  if (const json* m = top.child("model")) {
    Section s(*m, "model");
    s.read("d_model", c.model.d_model);
    s.read("heads", c.model.heads);
    s.read("encoder_layers", c.model.encoder_layers);
    s.read("d_feat", c.model.d_feat);
    s.read("n_private", c.model.n_private);
    s.read("n_shared", c.model.n_shared);
    s.read("k", c.model.k);
    s.read("refine_layers", c.model.refine_layers);
    s.finish();
  }
  if (const json* t = top.child("train")) {
    Section s(*t, "train");
    s.read("lr", c.train.lr);
    s.read("weight_decay", c.train.weight_decay);
    s.read("batch_size", c.train.batch_size);
    s.read("epochs", c.train.epochs);
    s.read("stage1_epochs", c.train.stage1_epochs);
    s.read("seed", c.train.seed);
    s.read("grad_clip", c.train.grad_clip);
    std::string routing = to_string(c.train.routing, c.train.fixed_expert);
    s.read("routing_mode", routing);
    parse_routing_mode(routing, c.train.routing, c.train.fixed_expert);
    if (const json* abl = s.child("ablations")) {
      if (!abl->is_array()) {
        throw ConfigError("config: train.ablations must be a list of names");
      }
      for (const auto& a : *abl) {
        if (!a.is_string()) {
          throw ConfigError("config: train.ablations must be a list of names");
        }
        apply_ablation(c.train.ablations, a.get<std::string>());
      }
    }
    if (const json* lw = s.child("loss_weights")) {
      Section l(*lw, "train.loss_weights");
      l.read("sem", c.train.loss.sem);
      l.read("class", c.train.loss.cls);
      l.read("box", c.train.loss.box);
      l.read("traj", c.train.loss.traj);
      l.read("nll", c.train.loss.nll);
      l.finish();
    }
    s.finish();
  }
  if (const json* d = top.child("data")) {
    Section s(*d, "data");
    s.read("n", c.data.n);
    s.read("seed", c.data.seed);
    s.read("mismatch_rate", c.data.mismatch_rate);
    s.read("val_n", c.data.val_n);
    s.read("val_seed", c.data.val_seed);
    s.finish();
  }
  if (const json* sc = top.child("score")) {
    Section s(*sc, "score");
    if (const json* w = s.child("weights")) {
      if (!w->is_array() || w->size() != 3 || !(*w)[0].is_number() || !(*w)[1].is_number() ||
          !(*w)[2].is_number()) {
        throw ConfigError("config: score.weights must be [w_ep, w_ttc, w_c]");
      }
      c.score.w_ep = (*w)[0].get<double>();
      c.score.w_ttc = (*w)[1].get<double>();
      c.score.w_c = (*w)[2].get<double>();
    }
    s.read("ttc_threshold", c.score.ttc_threshold);
    s.read("accel_max", c.score.accel_max);
    s.read("jerk_max", c.score.jerk_max);
    s.finish();
  }
  top.finish();
  c.validate();
  return c;
}

std::string dump_run_config(const RunConfig& cfg, int indent) { return to_json(cfg).dump(indent); }

std::string config_hash(const RunConfig& cfg) { return fmt::format("{:016x}", fnv1a(to_json(cfg).dump())); }

}  // namespace artemis
