#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "fscil/error.hpp"
#include "fscil/params.hpp"

namespace fscil {

struct ScheduleConfig {
  enum class Kind { kStepDecay, kCosine };
  Kind kind = Kind::kStepDecay;
  // step decay: lr *= gamma every interval_steps
  double gamma = 0.1;
  std::size_t interval_steps = 0;  // 0 means never decay
  // cosine: annealed over total_steps
  std::size_t total_steps = 1;
};

struct OptimizerConfig {
  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  ScheduleConfig schedule;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0,1)");
    if (weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
    if (schedule.kind == ScheduleConfig::Kind::kStepDecay && !(schedule.gamma > 0.0)) {
      throw ConfigError("step-decay gamma must be positive");
    }
    if (schedule.kind == ScheduleConfig::Kind::kCosine && schedule.total_steps == 0) {
      throw ConfigError("cosine schedule needs total_steps >= 1");
    }
  }

  // lr(step); strictly positive for every step. Cosine steps past the
  // horizon clamp to the final in-range step.
  double lr_at(std::size_t step) const {
    switch (schedule.kind) {
      case ScheduleConfig::Kind::kStepDecay: {
        if (schedule.interval_steps == 0) return learning_rate;
        double k = static_cast<double>(step / schedule.interval_steps);
        return learning_rate * std::pow(schedule.gamma, k);
      }
      case ScheduleConfig::Kind::kCosine: {
        std::size_t s = step < schedule.total_steps ? step : schedule.total_steps - 1;
        double frac = static_cast<double>(s) / static_cast<double>(schedule.total_steps);
        return learning_rate * 0.5 * (1.0 + std::cos(3.14159265358979323846 * frac));
      }
    }
    throw ConfigError("unknown schedule kind");
  }
};

// Momentum SGD with coupled weight decay:
//   buf <- momentum * buf + grad + weight_decay * param
//   param <- param - lr(step) * buf
// Updates the named subset, or every parameter when names is empty. Each
// touched parameter must have a populated gradient.
inline void sgd_step(ParamStore& store, const OptimizerConfig& config, std::size_t step,
                     const std::vector<std::string>& names = {}) {
  config.validate();
  const std::vector<std::string> all = names.empty() ? store.names() : names;
  double lr = config.lr_at(step);
  for (const auto& name : all) {
    if (!store.grad_populated(name)) {
      throw IncompleteGradientError("sgd_step: gradient not populated for " + name);
    }
    Tensor& p = store.param(name);
    const Tensor& g = store.grad(name);
    Tensor& buf = store.momentum(name);
    for (std::size_t i = 0; i < p.numel(); ++i) {
      buf[i] = config.momentum * buf[i] + g[i] + config.weight_decay * p[i];
      p[i] -= lr * buf[i];
    }
    if (!p.all_finite()) throw NumericError("sgd_step produced non-finite values in " + name);
  }
}

}  // namespace fscil
