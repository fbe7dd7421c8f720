#pragma once

#include <string>

#include "bagclr/losses.hpp"

namespace bagclr {

enum class TrainableSet { kAll, kProjectorLastLayer };
enum class LrSchedule { kWarmupCosine, kConstant };

TrainableSet parse_trainable_set(const std::string& name);
std::string to_string(TrainableSet set);
LrSchedule parse_lr_schedule(const std::string& name);
std::string to_string(LrSchedule schedule);

/// sqrt batch scaling: 0.075 * sqrt(batch_size).
double default_base_lr(int batch_size);

/// Declarative description of one pretraining stage.
struct StagePlan {
  int stage_id = 1;
  LossKind loss = LossKind::kNtXent;
  TrainableSet trainable = TrainableSet::kAll;
  int epochs = 1;
  double base_lr = 0.0;
  LrSchedule schedule = LrSchedule::kWarmupCosine;
  int warmup_epochs = 0;

  // Canonical plan for a stage. Stage 3 divides base_lr by 1000.
  static StagePlan standard(int stage_id, int epochs, double base_lr, int warmup_epochs = 10);
  // Throws ConfigError when the plan breaks the fixed stage layout.
  void validate() const;
};

/// Learning rate at global step s = epoch * steps_per_epoch + step.
/// warmup_cosine: base * s / W during W = warmup_epochs * steps_per_epoch
/// warmup steps, then base * (1 + cos(pi p)) / 2 with p running from 0 at
/// step W to 1 at the last step of the stage.
double lr_at(const StagePlan& plan, double epoch, int steps_per_epoch, int step);

}  // namespace bagclr
