#pragma once

#include <functional>
#include <string>
#include <vector>

#include "artemis/common/binary_io.hpp"
#include "artemis/training/model.hpp"

namespace artemis {

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based over both stages
  int stage = 2;          // 1: perception only, 2: end to end
  double train_loss = 0.0;
  double train_l1 = 0.0;  // NaN in stage 1
  double val_l1 = 0.0;
  double best_val_l1 = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::string config_hash;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double samples_per_sec = 0.0;

  /// Train L1 of the first and last end-to-end epochs.
  double first_l1() const;
  double final_l1() const;
};

struct EvalResult {
  std::vector<SubScores> per_scene;
  std::vector<Trajectory> trajectories;
  std::vector<double> l1;  // per scene
  SubScores mean;
  double mean_l1 = 0.0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Two-stage training. Leaves the parameters at the epoch with the best validation L1.
/// Throws DivergenceError naming the epoch and batch on a non-finite loss.
TrainReport train(const Model& model, ParameterSet& params, std::span<const Scene> train_set,
                  std::span<const Scene> val_set, const RunConfig& cfg, const EpochCallback& on_epoch = {});

/// Mean-mode rollouts, refinement and scoring.
EvalResult evaluate(const Model& model, std::span<const Scene> scenes, const ScoreConfig& score,
                    std::size_t batch_size = 64);
/// The constant-velocity baseline through the same scoring path.
EvalResult evaluate_baseline(std::span<const Scene> scenes, const ScoreConfig& score);

/// Mean L1 (heading wrapped) between two trajectories.
double trajectory_l1(const Trajectory& a, const Trajectory& b);

/// Builds the model for a config with parameters seeded from train.seed.
Model build_model(ParameterSet& params, const RunConfig& cfg);

struct Checkpoint {
  RunConfig config;
  std::string config_hash;
  std::size_t epoch = 0;
  std::vector<std::pair<std::string, Tensor>> parameters;
};

std::vector<char> serialize_checkpoint(const RunConfig& cfg, const ParameterSet& params, std::size_t epoch);
/// Throws FormatError on corrupt input and VersionError on a foreign tool version.
Checkpoint deserialize_checkpoint(const std::vector<char>& bytes);
void save_checkpoint(const std::string& path, const RunConfig& cfg, const ParameterSet& params, std::size_t epoch);
Checkpoint load_checkpoint(const std::string& path);
/// Copies checkpoint values into matching parameters; names and shapes must agree.
void restore_parameters(const Checkpoint& ckpt, ParameterSet& params);

std::string report_csv(const TrainReport& report);
/// Per-scene rows followed by a summary row and the baseline summary row.
std::string eval_csv(const EvalResult& model, const EvalResult& baseline, std::span<const Scene> scenes,
                     const std::string& config_hash);

}  // namespace artemis
