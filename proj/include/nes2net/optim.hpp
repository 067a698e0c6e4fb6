// Copyright 2026 the nes2net authors
// SPDX-License-Identifier: Apache-2.0
//
// Adam family optimizers and the cyclic cosine learning-rate schedule.
// Moment buffers and update arithmetic run in double regardless of the
// parameter dtype; the result is cast back on write.
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nes2net/tensor.hpp"

namespace n2n {

enum class OptimizerKind { adam, adamw };

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "adamw") return OptimizerKind::adamw;
  throw std::invalid_argument("unknown optimizer '" + s + "'");
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adamw;
  double lr = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;

  void validate() const {
    auto need = [](bool ok, const char* msg) {
      if (!ok) throw std::invalid_argument(std::string("optimizer config: ") + msg);
    };
    need(lr >= 0.0, "lr must be >= 0");
    need(beta1 >= 0.0 && beta1 < 1.0, "beta1 must be in [0, 1)");
    need(beta2 >= 0.0 && beta2 < 1.0, "beta2 must be in [0, 1)");
    need(eps > 0.0, "eps must be > 0");
    need(weight_decay >= 0.0, "weight_decay must be >= 0");
  }
};

// Weight decay placement is the only difference between the two modes:
// adamw decays decoupled (w -= lr*wd*w before the update), adam folds the
// decay term into the gradient.
template <std::floating_point T>
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  void set_lr(double lr) {
    if (lr < 0.0) throw std::invalid_argument("optimizer: lr must be >= 0");
    cfg_.lr = lr;
  }
  double lr() const { return cfg_.lr; }
  std::uint64_t steps() const { return t_; }

  void step(const std::vector<std::pair<Tensor<T>*, const Tensor<T>*>>& params_and_grads) {
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& [p, g] : params_and_grads) {
      if (!p->same_shape(*g))
        throw std::invalid_argument("optimizer: parameter/gradient shape mismatch");
      Moments& mo = state_[p];
      if (mo.m.empty()) {
        mo.m.assign(p->numel(), 0.0);
        mo.v.assign(p->numel(), 0.0);
      }
      for (std::size_t i = 0; i < p->numel(); ++i) {
        double w = static_cast<double>((*p)[i]);
        double gi = static_cast<double>((*g)[i]);
        if (cfg_.kind == OptimizerKind::adam)
          gi += cfg_.weight_decay * w;
        else
          w -= cfg_.lr * cfg_.weight_decay * w;
        mo.m[i] = cfg_.beta1 * mo.m[i] + (1.0 - cfg_.beta1) * gi;
        mo.v[i] = cfg_.beta2 * mo.v[i] + (1.0 - cfg_.beta2) * gi * gi;
        double mhat = mo.m[i] / bc1;
        double vhat = mo.v[i] / bc2;
        w -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        (*p)[i] = static_cast<T>(w);
      }
    }
  }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  OptimizerConfig cfg_;
  std::uint64_t t_ = 0;
  std::unordered_map<const Tensor<T>*, Moments> state_;
};

// lr(epoch) = eta_min + (eta_max - eta_min) * (1 + cos(pi * phase)) / 2 with
// phase = (epoch mod cycle_length) / cycle_length. Epoch 0 (and every cycle
// restart) sits at eta_max; the minimum inside a cycle is its last epoch.
struct CosineCycleSchedule {
  double eta_max = 1e-6;
  double eta_min = 1e-9;
  std::size_t cycle_length = 0;

  void validate() const {
    if (cycle_length == 0)
      throw std::invalid_argument("schedule: cycle_length must be positive");
    if (eta_min > eta_max) throw std::invalid_argument("schedule: eta_min must be <= eta_max");
  }

  double lr_at(std::size_t epoch) const {
    validate();
    double phase = static_cast<double>(epoch % cycle_length) / static_cast<double>(cycle_length);
    return eta_min + (eta_max - eta_min) * (1.0 + std::cos(std::numbers::pi * phase)) / 2.0;
  }

  // Epoch of minimum lr within the cycle containing `epoch`.
  std::size_t min_lr_epoch(std::size_t epoch) const {
    validate();
    return (epoch / cycle_length) * cycle_length + cycle_length - 1;
  }
};

}  // namespace n2n
