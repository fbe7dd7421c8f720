#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "bagclr/layers.hpp"

namespace bagclr {

enum class OptimizerKind { kLars, kSgdMomentum, kAdamW };

OptimizerKind parse_optimizer_kind(const std::string& name);
std::string to_string(OptimizerKind kind);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kLars;
  double weight_decay = 1e-6;
  double momentum = 0.9;
  // LARS: local_lr = lr * trust * |w| / (|g| + wd * |w|).
  double trust_coefficient = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One LARS update on a single parameter tensor. Exempt tensors (biases,
/// normalization terms) skip both weight decay and trust scaling. A tensor
/// whose gradient is exactly zero is left untouched.
void lars_update(std::span<float> weights, std::span<const float> grads,
                 std::span<float> momentum_buffer, double lr, const OptimizerConfig& config,
                 bool exempt);

/// Per-parameter optimizer state keyed by parameter name.
class Optimizer {
 public:
  struct Slot {
    Tensor<float> first;   // momentum / Adam first moment
    Tensor<float> second;  // Adam second moment
    std::int64_t steps = 0;
  };

  Optimizer() = default;
  explicit Optimizer(const OptimizerConfig& config) : config_(config) {}

  const OptimizerConfig& config() const { return config_; }

  // Throws TrainingError on a non-finite gradient before touching any weight.
  void step(const ParameterList<float>& params, double lr);

  const std::map<std::string, Slot>& slots() const { return slots_; }
  std::map<std::string, Slot>& slots() { return slots_; }

 private:
  Slot& slot_for(const Parameter<float>& p);

  OptimizerConfig config_;
  std::map<std::string, Slot> slots_;
};

void zero_grad(const ParameterList<float>& params);
void zero_grad(const ParameterList<double>& params);

}  // namespace bagclr
