#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "bagclr/checkpoint.hpp"

namespace bagclr {

struct PretrainConfig {
  ModelConfig model;
  AugmentConfig augment;
  OptimizerConfig optimizer;
  int batch_size = 1024;
  double temperature = 0.5;
  std::array<StagePlan, 3> stages = {StagePlan::standard(1, 1000, default_base_lr(1024)),
                                     StagePlan::standard(2, 25, default_base_lr(1024)),
                                     StagePlan::standard(3, 200, default_base_lr(1024))};
  int checkpoint_every = 25;  // epochs; 0 disables periodic checkpoints
  int keep_checkpoints = 2;
  std::uint64_t seed = 0;
  std::uint64_t anneal_seed = 17;

  void validate() const;
};

void to_json(json& j, const PretrainConfig& c);
void from_json(const json& j, PretrainConfig& c);

struct LogRow {
  int stage = 0;
  int epoch = 0;
  int step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct StageResult {
  Checkpoint checkpoint;
  std::vector<LogRow> log;
  std::vector<double> epoch_mean_loss;  // epochs run in this call only
};

struct StageOptions {
  std::filesystem::path out_dir;  // empty: no files written
  json run_config = json::object();
  // Continue from a mid-stage checkpoint of the same stage. The model must
  // already hold its weights.
  const Checkpoint* resume = nullptr;
  // Stop after this many completed epochs (counted from stage start); -1 runs
  // to the end. Used to emulate an interrupted run.
  int stop_after_epoch = -1;
  std::function<void(const LogRow&)> on_step;
};

/// One pretraining stage over the decoded records of `data`. Throws
/// ConfigError when the projector width does not fit the stage and DataError
/// when the dataset holds less than one batch.
StageResult run_stage(const StagePlan& plan, Model& model, const DatasetManifest& data,
                      const PretrainConfig& config, const StageOptions& options = {});

/// Stages 1 -> anneal -> 2 -> 3. With options.resume, continues from the
/// checkpoint's stage and epoch (model must hold the checkpoint's weights).
Checkpoint pretrain(Model& model, const DatasetManifest& data, const PretrainConfig& config,
                    const StageOptions& options = {});

/// Refits the projector's last layer to a changed encoder with the stage-two
/// objective; everything else stays frozen.
StageResult realign_projector(Model& model, const DatasetManifest& data,
                              const PretrainConfig& config, int epochs,
                              const StageOptions& options = {});

}  // namespace bagclr
