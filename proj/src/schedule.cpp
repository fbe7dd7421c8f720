#include "bagclr/schedule.hpp"

#include <cmath>
#include <numbers>

namespace bagclr {

TrainableSet parse_trainable_set(const std::string& name) {
  if (name == "all") return TrainableSet::kAll;
  if (name == "projector_last_layer_only") return TrainableSet::kProjectorLastLayer;
  throw ConfigError("unknown trainable set '" + name + "'");
}

std::string to_string(TrainableSet set) {
  return set == TrainableSet::kAll ? "all" : "projector_last_layer_only";
}

LrSchedule parse_lr_schedule(const std::string& name) {
  if (name == "warmup_cosine") return LrSchedule::kWarmupCosine;
  if (name == "constant") return LrSchedule::kConstant;
  throw ConfigError("unknown lr schedule '" + name + "'");
}

std::string to_string(LrSchedule schedule) {
  return schedule == LrSchedule::kWarmupCosine ? "warmup_cosine" : "constant";
}

double default_base_lr(int batch_size) {
  if (batch_size <= 0) throw ConfigError("batch size must be positive");
  return 0.075 * std::sqrt(static_cast<double>(batch_size));
}

StagePlan StagePlan::standard(int stage_id, int epochs, double base_lr, int warmup_epochs) {
  StagePlan p;
  p.stage_id = stage_id;
  p.epochs = epochs;
  switch (stage_id) {
    case 1:
      p.loss = LossKind::kNtXent;
      p.base_lr = base_lr;
      p.warmup_epochs = warmup_epochs;
      break;
    case 2:
      p.loss = LossKind::kCauchy;
      p.trainable = TrainableSet::kProjectorLastLayer;
      p.schedule = LrSchedule::kConstant;
      p.base_lr = base_lr;
      break;
    case 3:
      p.loss = LossKind::kCauchy;
      p.base_lr = base_lr / 1000.0;
      p.warmup_epochs = warmup_epochs;
      break;
    default:
      throw ConfigError("stage id must be 1, 2 or 3");
  }
  p.validate();
  return p;
}

void StagePlan::validate() const {
  const std::string where = "stage " + std::to_string(stage_id) + ": ";
  if (stage_id < 1 || stage_id > 3) throw ConfigError("stage id must be 1, 2 or 3");
  if (epochs < 1) throw ConfigError(where + "epochs must be >= 1");
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw ConfigError(where + "base_lr must be positive");
  if (warmup_epochs < 0 || (warmup_epochs >= epochs && schedule == LrSchedule::kWarmupCosine))
    throw ConfigError(where + "warmup_epochs must lie in [0, epochs)");
  const bool ok = stage_id == 1
                      ? loss == LossKind::kNtXent && trainable == TrainableSet::kAll &&
                            schedule == LrSchedule::kWarmupCosine
                  : stage_id == 2
                      ? loss == LossKind::kCauchy && trainable == TrainableSet::kProjectorLastLayer &&
                            schedule == LrSchedule::kConstant
                      : loss == LossKind::kCauchy && trainable == TrainableSet::kAll &&
                            schedule == LrSchedule::kWarmupCosine;
  if (!ok) throw ConfigError(where + "loss, trainable set or schedule does not match the stage");
}

double lr_at(const StagePlan& plan, double epoch, int steps_per_epoch, int step) {
  if (steps_per_epoch < 1) throw ConfigError("steps_per_epoch must be >= 1");
  if (!(epoch >= 0.0) || epoch >= plan.epochs)
    throw ConfigError("epoch " + std::to_string(epoch) + " outside [0, " +
                      std::to_string(plan.epochs) + ")");
  if (step < 0 || step >= steps_per_epoch) throw ConfigError("step outside [0, steps_per_epoch)");
  if (plan.schedule == LrSchedule::kConstant) return plan.base_lr;

  const double s = epoch * steps_per_epoch + step;
  const double warmup = static_cast<double>(plan.warmup_epochs) * steps_per_epoch;
  const double last = static_cast<double>(plan.epochs) * steps_per_epoch - 1.0;
  if (s < warmup) return plan.base_lr * s / warmup;
  if (last <= warmup) return plan.base_lr;
  const double p = std::min(1.0, (s - warmup) / (last - warmup));
  return plan.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * p));
}

}  // namespace bagclr
