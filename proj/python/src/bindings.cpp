#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>

#include "artemis/common/errors.hpp"
#include "artemis/moe/bench.hpp"
#include "artemis/scene/dataset_io.hpp"
#include "artemis/training/trainer.hpp"

namespace py = pybind11;
using namespace artemis;

namespace {

using PyTrajectory = std::vector<std::array<double, 3>>;

PyTrajectory to_py(const Trajectory& t) {
  PyTrajectory out;
  for (const Pose& p : t) {
    out.push_back({p.x, p.y, p.heading});
  }
  return out;
}

Trajectory from_py(const PyTrajectory& t) {
  if (t.size() != kHorizon) {
    throw std::invalid_argument("trajectory must have " + std::to_string(kHorizon) + " (x, y, heading) rows");
  }
  Trajectory out;
  for (std::size_t i = 0; i < kHorizon; ++i) {
    out[i] = Pose{t[i][0], t[i][1], t[i][2]};
  }
  return out;
}

py::dict scores_dict(const SubScores& s) {
  py::dict d;
  d["nc"] = s.nc;
  d["dac"] = s.dac;
  d["ep"] = s.ep;
  d["ttc"] = s.ttc;
  d["c"] = s.c;
  d["pdms"] = s.pdms;
  return d;
}

py::dict eval_dict(const EvalResult& r) {
  py::dict d = scores_dict(r.mean);
  d["l1"] = r.mean_l1;
  py::list per;
  for (const SubScores& s : r.per_scene) {
    per.append(scores_dict(s));
  }
  d["per_scene"] = per;
  return d;
}

// Parameters and the model that points into them, kept together.
class Session {
 public:
  explicit Session(RunConfig cfg) : cfg_(std::move(cfg)), params_(std::make_unique<ParameterSet>()) {
    cfg_.validate();
    model_ = build_model(*params_, cfg_);
  }

  static std::unique_ptr<Session> from_checkpoint(const std::string& path) {
    const Checkpoint ckpt = load_checkpoint(path);
    auto s = std::make_unique<Session>(ckpt.config);
    restore_parameters(ckpt, *s->params_);
    s->epoch_ = ckpt.epoch;
    return s;
  }

  py::dict train(const Dataset& train_set, const Dataset& val_set) {
    const TrainReport rep = artemis::train(model_, *params_, train_set.scenes, val_set.scenes, cfg_);
    epoch_ = rep.best_epoch;
    py::list epochs;
    for (const EpochRecord& e : rep.epochs) {
      py::dict d;
      d["epoch"] = e.epoch;
      d["stage"] = e.stage;
      d["train_loss"] = e.train_loss;
      d["train_l1"] = e.train_l1;
      d["val_l1"] = e.val_l1;
      d["best_val_l1"] = e.best_val_l1;
      epochs.append(d);
    }
    py::dict out;
    out["epochs"] = epochs;
    out["best_epoch"] = rep.best_epoch;
    out["samples_per_sec"] = rep.samples_per_sec;
    out["config_hash"] = rep.config_hash;
    return out;
  }

  py::dict evaluate(const Dataset& d) const { return eval_dict(artemis::evaluate(model_, d.scenes, cfg_.score)); }

  std::vector<PyTrajectory> predict(const Dataset& d) const {
    std::vector<PyTrajectory> out;
    for (const Trajectory& t : artemis::evaluate(model_, d.scenes, cfg_.score).trajectories) {
      out.push_back(to_py(t));
    }
    return out;
  }

  void save(const std::string& path) const { save_checkpoint(path, cfg_, *params_, epoch_); }
  py::bytes checkpoint_bytes() const {
    const auto b = serialize_checkpoint(cfg_, *params_, epoch_);
    return {b.data(), b.size()};
  }
  std::string config_json() const { return dump_run_config(cfg_); }
  std::string hash() const { return config_hash(cfg_); }
  std::size_t num_parameters() const { return params_->numel(); }

 private:
  RunConfig cfg_;
  std::unique_ptr<ParameterSet> params_;
  Model model_;
  std::size_t epoch_ = 0;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Autoregressive mixture-of-experts trajectory planner";
  m.attr("__version__") = kToolVersion;
  m.attr("HORIZON") = kHorizon;

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_ArithmeticError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);
  py::register_exception<IoError>(m, "IoError", PyExc_IOError);

  py::class_<Scene>(m, "Scene")
      .def_readonly("seed", &Scene::seed)
      .def_property_readonly("kind", [](const Scene& s) { return std::string(to_string(s.kind)); })
      .def_property_readonly("behavior", [](const Scene& s) { return std::string(to_string(s.behavior)); })
      .def_readonly("command_mismatch", &Scene::command_mismatch)
      .def_property_readonly("command", [](const Scene& s) { return static_cast<int>(s.ego.command); })
      .def_property_readonly("velocity", [](const Scene& s) { return std::array{s.ego.velocity.x, s.ego.velocity.y}; })
      .def_property_readonly("ego_features", [](const Scene& s) { return s.ego.features(); })
      .def_property_readonly("num_agents", [](const Scene& s) { return s.agents.size(); })
      .def_property_readonly("gt", [](const Scene& s) { return to_py(s.gt); })
      .def_property_readonly("semantic_map", [](const Scene& s) { return s.semantic_map; });

  py::class_<Dataset>(m, "Dataset")
      .def_readonly("seed", &Dataset::seed)
      .def_readonly("mismatch_rate", &Dataset::mismatch_rate)
      .def_readonly("version", &Dataset::version)
      .def("config_hash", &Dataset::config_hash)
      .def("__len__", [](const Dataset& d) { return d.scenes.size(); })
      .def(
          "__getitem__",
          [](const Dataset& d, std::size_t i) -> const Scene& {
            if (i >= d.scenes.size()) {
              throw py::index_error();
            }
            return d.scenes[i];
          },
          py::return_value_policy::reference_internal)
      .def("save", [](const Dataset& d, const std::string& path) { save_dataset(d, path); })
      .def("__eq__", [](const Dataset& a, const Dataset& b) { return a == b; });

  py::class_<GeneratorConfig>(m, "GeneratorConfig").def(py::init<>()).def_readwrite("d_feat", &GeneratorConfig::d_feat);
  m.def("generate_dataset", &generate_dataset, py::arg("n"), py::arg("seed"), py::arg("mismatch_rate") = 0.0,
        py::arg("config") = GeneratorConfig{}, "Synthetic scenes, deterministic in (n, seed, mismatch_rate).");
  m.def("load_dataset", &load_dataset, py::arg("path"));

  m.def(
      "score_trajectory",
      [](const PyTrajectory& t, const Scene& s) { return scores_dict(score_trajectory(from_py(t), s)); },
      py::arg("trajectory"), py::arg("scene"), "NC, DAC, EP, TTC, C and PDMS of one trajectory.");
  m.def(
      "constant_velocity_baseline", [](const Scene& s) { return to_py(constant_velocity_baseline(s.ego)); },
      py::arg("scene"));
  m.def(
      "evaluate_baseline",
      [](const Dataset& d, const std::string& config_json) {
        return eval_dict(evaluate_baseline(d.scenes, parse_run_config(config_json).score));
      },
      py::arg("dataset"), py::arg("config_json") = "{}");

  m.def(
      "project_points",
      [](const std::vector<std::array<double, 2>>& pts, std::array<double, 3> weights) {
        if (pts.size() != kHorizon) {
          throw std::invalid_argument("project_points: need 8 (x, y) points");
        }
        PointBlock p;
        for (std::size_t i = 0; i < kHorizon; ++i) {
          p[2 * i] = pts[i][0];
          p[2 * i + 1] = pts[i][1];
        }
        const ProjectionConfig cfg;
        const PointBlock q = project_points(p, {weights[0], weights[1], weights[2]}, cfg);
        std::vector<std::array<double, 2>> out;
        for (std::size_t i = 0; i < kHorizon; ++i) {
          out.push_back({q[2 * i], q[2 * i + 1]});
        }
        return out;
      },
      py::arg("points"), py::arg("weights") = std::array<double, 3>{0.05, 1e6, 1e6},
      "Kinematic projection of 8 waypoints with fixed (smooth, curvature, acceleration) weights.");

  m.def(
      "parse_config", [](const std::string& text) { return dump_run_config(parse_run_config(text)); },
      py::arg("json"), "Validates a run configuration and returns its canonical form.");
  m.def(
      "config_hash", [](const std::string& text) { return config_hash(parse_run_config(text)); }, py::arg("json"));

  m.def(
      "bench_dispatch",
      [](std::vector<std::size_t> batch_sizes, std::size_t repeats, bool backward) {
        BenchConfig bc;
        bc.batch_sizes = std::move(batch_sizes);
        bc.repeats = repeats;
        bc.backward = backward;
        py::list rows;
        for (const BenchRow& r : bench_dispatch(bc)) {
          py::dict d;
          d["batch_size"] = r.batch_size;
          d["mode"] = r.mode;
          d["samples_per_sec"] = r.samples_per_sec;
          d["speedup"] = r.speedup;
          rows.append(d);
        }
        return rows;
      },
      py::arg("batch_sizes"), py::arg("repeats") = 3, py::arg("backward") = true);

  py::class_<Session>(m, "Planner")
      .def(py::init([](const std::string& config_json) { return std::make_unique<Session>(parse_run_config(config_json)); }),
           py::arg("config_json") = "{}")
      .def_static("load", &Session::from_checkpoint, py::arg("path"))
      .def("train", &Session::train, py::arg("train_set"), py::arg("val_set"),
           "Perception stage then end-to-end training; keeps the best validation epoch.")
      .def("evaluate", &Session::evaluate, py::arg("dataset"))
      .def("predict", &Session::predict, py::arg("dataset"))
      .def("save", &Session::save, py::arg("path"))
      .def("checkpoint_bytes", &Session::checkpoint_bytes)
      .def_property_readonly("config_json", &Session::config_json)
      .def_property_readonly("config_hash", &Session::hash)
      .def_property_readonly("num_parameters", &Session::num_parameters);
}
