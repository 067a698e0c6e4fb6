// Copyright 2026 the nes2net authors
// SPDX-License-Identifier: Apache-2.0
//
// Classification losses on the tape. Both take raw logits and a class index
// and return a scalar [1] variable.
#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "nes2net/layers.hpp"
#include "nes2net/model.hpp"

namespace n2n {

struct FocalLossConfig {
  double gamma = 2.0;
  double alpha = 0.25;          // weight of the bonafide (positive) class
  bool alpha_weighting = true;  // off: unit weights for both classes

  void validate() const {
    if (gamma < 0.0) throw std::invalid_argument("focal loss: gamma must be >= 0");
    if (alpha <= 0.0 || alpha > 1.0)
      throw std::invalid_argument("focal loss: alpha must be in (0, 1]");
  }
};

namespace detail {

// log softmax(logits)[label], max-shifted. The shift is a constant taken
// from the forward value; the gradient of log-sum-exp is unchanged by it.
template <std::floating_point T>
Var<T> log_prob(Ctx<T>& ctx, Var<T> logits, std::size_t label) {
  const Tensor<T>& lv = logits.value();
  if (lv.rank() != 1) throw std::invalid_argument("loss: logits must be rank 1");
  if (label >= lv.numel()) throw std::invalid_argument("loss: label out of range");
  if (!lv.all_finite()) throw std::invalid_argument("loss: non-finite logits");
  T mx = lv[0];
  for (std::size_t i = 1; i < lv.numel(); ++i) mx = std::max(mx, lv[i]);
  Var<T> shifted = ag::add_const(logits, -mx);
  Var<T> lse = ag::log(ag::reduce_sum(ag::exp(shifted), 0));  // [1]
  (void)ctx;
  return ag::sub(ag::pick(shifted, label), lse);
}

}  // namespace detail

// -weight * (1 - p_t)^gamma * log p_t, with weight = alpha for bonafide and
// (1 - alpha) for spoof when alpha weighting is on. gamma = 0 with weighting
// off is exactly cross-entropy.
template <std::floating_point T>
Var<T> focal_loss(Ctx<T>& ctx, Var<T> logits, std::size_t label, const FocalLossConfig& cfg) {
  cfg.validate();
  Var<T> lp = detail::log_prob(ctx, logits, label);
  Var<T> p = ag::exp(lp);
  Var<T> loss = ag::neg(lp);
  if (cfg.gamma != 0.0)
    loss = ag::mul(ag::pow_const(ag::add_const(ag::neg(p), T(1)), T(cfg.gamma)), loss);
  if (cfg.alpha_weighting) {
    double w = label == kBonafideClass ? cfg.alpha : 1.0 - cfg.alpha;
    loss = ag::scale(loss, T(w));
  }
  return loss;
}

// -class_weights[label] * log softmax(logits)[label]
template <std::floating_point T>
Var<T> weighted_ce(Ctx<T>& ctx, Var<T> logits, std::size_t label,
                   const std::vector<double>& class_weights) {
  if (class_weights.size() != logits.value().numel())
    throw std::invalid_argument("weighted_ce: one weight per class required");
  for (double w : class_weights)
    if (!(w > 0.0)) throw std::invalid_argument("weighted_ce: weights must be positive");
  Var<T> lp = detail::log_prob(ctx, logits, label);
  return ag::scale(ag::neg(lp), T(class_weights[label]));
}

}  // namespace n2n
