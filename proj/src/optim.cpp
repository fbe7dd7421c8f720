#include "bagclr/optim.hpp"

#include <cmath>

namespace bagclr {

OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "lars") return OptimizerKind::kLars;
  if (name == "sgd_momentum") return OptimizerKind::kSgdMomentum;
  if (name == "adamw") return OptimizerKind::kAdamW;
  throw ConfigError("unknown optimizer '" + name + "' (expected lars, sgd_momentum or adamw)");
}

std::string to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::kLars: return "lars";
    case OptimizerKind::kSgdMomentum: return "sgd_momentum";
    case OptimizerKind::kAdamW: return "adamw";
  }
  return "?";
}

namespace {

double norm(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += double(x) * x;
  return std::sqrt(s);
}

}  // namespace

void lars_update(std::span<float> w, std::span<const float> g, std::span<float> v, double lr,
                 const OptimizerConfig& cfg, bool exempt) {
  const double gn = norm(g);
  // An all-zero gradient means the tensor took no part in the loss; leave it
  // and its momentum alone rather than decaying it.
  if (gn == 0.0) return;
  const double wd = exempt ? 0.0 : cfg.weight_decay;
  double local_lr = lr;
  if (!exempt) {
    const double wn = norm(w);
    if (wn > 0.0) local_lr = lr * cfg.trust_coefficient * wn / (gn + wd * wn);
  }
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double update = double(g[i]) + wd * w[i];
    v[i] = static_cast<float>(cfg.momentum * v[i] + local_lr * update);
    w[i] -= v[i];
  }
}

Optimizer::Slot& Optimizer::slot_for(const Parameter<float>& p) {
  auto& s = slots_[p.name];
  if (s.first.shape() != p.value.shape()) {
    s.first = Tensor<float>(p.value.shape());
    if (config_.kind == OptimizerKind::kAdamW) s.second = Tensor<float>(p.value.shape());
    s.steps = 0;
  }
  return s;
}

void Optimizer::step(const ParameterList<float>& params, double lr) {
  for (const auto* p : params)
    for (float g : p->grad.values())
      if (!std::isfinite(g)) throw TrainingError("non-finite gradient in " + p->name);

  for (auto* p : params) {
    Slot& s = slot_for(*p);
    ++s.steps;
    auto w = p->value.values();
    const auto g = p->grad.values();
    switch (config_.kind) {
      case OptimizerKind::kLars:
        lars_update(w, g, s.first.values(), lr, config_, p->exempt);
        break;
      case OptimizerKind::kSgdMomentum: {
        const double wd = p->exempt ? 0.0 : config_.weight_decay;
        for (std::size_t i = 0; i < w.size(); ++i) {
          s.first[i] = static_cast<float>(config_.momentum * s.first[i] + g[i] + wd * w[i]);
          w[i] -= static_cast<float>(lr * s.first[i]);
        }
        break;
      }
      case OptimizerKind::kAdamW: {
        const double b1 = config_.beta1, b2 = config_.beta2;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(s.steps));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(s.steps));
        const double decay = 1.0 - lr * config_.weight_decay;
        for (std::size_t i = 0; i < w.size(); ++i) {
          s.first[i] = static_cast<float>(b1 * s.first[i] + (1 - b1) * g[i]);
          s.second[i] = static_cast<float>(b2 * s.second[i] + (1 - b2) * double(g[i]) * g[i]);
          const double mhat = s.first[i] / c1, vhat = s.second[i] / c2;
          w[i] = static_cast<float>(w[i] * decay - lr * mhat / (std::sqrt(vhat) + config_.epsilon));
        }
        break;
      }
    }
  }
}

void zero_grad(const ParameterList<float>& params) {
  for (auto* p : params) p->zero_grad();
}

void zero_grad(const ParameterList<double>& params) {
  for (auto* p : params) p->zero_grad();
}

}  // namespace bagclr
