// Copyright 2026 the nes2net authors
// SPDX-License-Identifier: Apache-2.0
//
// Neural layers over the tape. Layers own their parameters as plain tensors;
// a Ctx binds them to leaves of the current tape on first use, so the same
// layer can run on many tapes (training steps, probes, threads) without
// copying. Channel-vector parameters are stored [C,1] so they broadcast over
// the time axis directly.
#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "nes2net/rng.hpp"
#include "nes2net/tape.hpp"
#include "nes2net/tensor.hpp"

namespace n2n {

template <std::floating_point T>
struct Ctx {
  Tape<T>& tape;
  bool train = false;           // batch statistics instead of running ones
  bool update_running = false;  // fold batch stats into running buffers

  explicit Ctx(Tape<T>& t) : tape(t) {}

  // Binds a parameter tensor once per tape; repeated uses share the leaf so
  // gradients from all its applications accumulate together.
  Var<T> param(Tensor<T>& p) {
    auto it = bound_.find(&p);
    if (it != bound_.end()) return Var<T>{&tape, it->second};
    Var<T> v = tape.leaf(p, true);
    bound_.emplace(&p, v.id);
    return v;
  }

  Var<T> constant(const Tensor<T>& c) { return tape.leaf(c, false); }

  // Gradient of a bound parameter after tape.backward(); zeros if the
  // parameter never participated.
  Tensor<T> grad(const Tensor<T>& p) const {
    auto it = bound_.find(&p);
    if (it == bound_.end()) return Tensor<T>(p.shape());
    return tape.grad(Var<T>{const_cast<Tape<T>*>(&tape), it->second});
  }

 private:
  std::unordered_map<const Tensor<T>*, std::size_t> bound_;
};

namespace init {

template <std::floating_point T>
void he_uniform(Tensor<T>& t, std::size_t fan_in, std::uint64_t seed) {
  Rng rng(seed);
  double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (std::size_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<T>(rng.uniform(-bound, bound));
}

template <std::floating_point T>
void constant(Tensor<T>& t, T v) {
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = v;
}

}  // namespace init

// y = W x (+ b). x is [in, cols]; columns are frames or a single pooled vector.
template <std::floating_point T>
struct Linear {
  Tensor<T> w;  // [out, in]
  Tensor<T> b;  // [out, 1] when biased, empty otherwise

  static Linear make(std::size_t in, std::size_t out, bool bias, std::uint64_t master,
                     const std::string& name) {
    Linear l;
    l.w = Tensor<T>({out, in});
    init::he_uniform(l.w, in, derive_seed(master, "init/" + name + ".weight"));
    if (bias) l.b = Tensor<T>({out, 1});
    return l;
  }

  Var<T> forward(Ctx<T>& ctx, Var<T> x) {
    Var<T> y = ag::matmul(ctx.param(w), x);
    if (!b.empty()) y = ag::add(y, ctx.param(b));
    return y;
  }

  template <class F>
  void visit(const std::string& prefix, F&& fn) {
    fn(prefix + ".weight", w);
    if (!b.empty()) fn(prefix + ".bias", b);
  }
};

// Cross-correlation conv over [C, T]; "same" length when pad = dil*(k-1)/2.
template <std::floating_point T>
struct Conv1d {
  Tensor<T> w;  // [out, in, k]
  Tensor<T> b;  // [out, 1] when biased
  std::size_t pad = 0, dil = 1;

  static Conv1d make(std::size_t in, std::size_t out, std::size_t k, std::size_t pad,
                     std::size_t dil, bool bias, std::uint64_t master, const std::string& name) {
    Conv1d c;
    c.w = Tensor<T>({out, in, k});
    c.pad = pad;
    c.dil = dil;
    init::he_uniform(c.w, in * k, derive_seed(master, "init/" + name + ".weight"));
    if (bias) c.b = Tensor<T>({out, 1});
    return c;
  }

  Var<T> forward(Ctx<T>& ctx, Var<T> x) {
    Var<T> y = ag::conv1d(x, ctx.param(w), pad, dil);
    if (!b.empty()) y = ag::add(y, ctx.param(b));
    return y;
  }

  template <class F>
  void visit(const std::string& prefix, F&& fn) {
    fn(prefix + ".weight", w);
    if (!b.empty()) fn(prefix + ".bias", b);
  }
};

// Per-channel normalization over the time axis of one utterance.
// Train mode normalizes by batch statistics (population variance) and, when
// Ctx::update_running is set, folds them into the running buffers; eval mode
// normalizes by the running buffers.
template <std::floating_point T>
struct BatchNorm1d {
  Tensor<T> gamma, beta;              // [C,1]
  Tensor<T> running_mean, running_var;  // [C,1] buffers, not trainable
  T momentum = T(0.1);
  T eps = T(1e-5);

  static BatchNorm1d make(std::size_t c) {
    BatchNorm1d bn;
    bn.gamma = Tensor<T>::full({c, 1}, T(1));
    bn.beta = Tensor<T>({c, 1});
    bn.running_mean = Tensor<T>({c, 1});
    bn.running_var = Tensor<T>::full({c, 1}, T(1));
    return bn;
  }

  Var<T> forward(Ctx<T>& ctx, Var<T> x) {
    Var<T> m, v;
    if (ctx.train) {
      m = ag::reduce_mean(x, 1);
      v = ag::reduce_var(x, 1);
      if (ctx.update_running) {
        const Tensor<T>&mv = m.value(), &vv = v.value();
        for (std::size_t i = 0; i < running_mean.numel(); ++i) {
          running_mean[i] = (T(1) - momentum) * running_mean[i] + momentum * mv[i];
          running_var[i] = (T(1) - momentum) * running_var[i] + momentum * vv[i];
        }
      }
    } else {
      m = ctx.constant(running_mean);
      v = ctx.constant(running_var);
    }
    Var<T> xhat = ag::div(ag::sub(x, m), ag::sqrt(ag::add_const(v, eps)));
    return ag::add(ag::mul(ctx.param(gamma), xhat), ctx.param(beta));
  }

  template <class F>
  void visit(const std::string& prefix, F&& fn) {
    fn(prefix + ".gamma", gamma);
    fn(prefix + ".beta", beta);
  }
  template <class F>
  void visit_buffers(const std::string& prefix, F&& fn) {
    fn(prefix + ".running_mean", running_mean);
    fn(prefix + ".running_var", running_var);
  }
};

// Squeeze-and-excitation: squeeze = unweighted time mean, excitation = two
// biased linear maps, then per-channel rescaling (constant over time).
template <std::floating_point T>
struct SEBlock {
  Linear<T> fc1, fc2;

  static SEBlock make(std::size_t c, std::size_t ratio, std::uint64_t master,
                      const std::string& name) {
    if (ratio == 0 || c % ratio != 0)
      throw std::invalid_argument(name + ": se ratio " + std::to_string(ratio) +
                                  " must divide width " + std::to_string(c));
    SEBlock se;
    se.fc1 = Linear<T>::make(c, c / ratio, true, master, name + ".fc1");
    se.fc2 = Linear<T>::make(c / ratio, c, true, master, name + ".fc2");
    return se;
  }

  Var<T> forward(Ctx<T>& ctx, Var<T> x) {
    Var<T> s = ag::reduce_mean(x, 1);  // [C,1]
    Var<T> g = ag::sigmoid(fc2.forward(ctx, ag::relu(fc1.forward(ctx, s))));
    return ag::mul(x, g);
  }

  template <class F>
  void visit(const std::string& prefix, F&& fn) {
    fc1.visit(prefix + ".fc1", fn);
    fc2.visit(prefix + ".fc2", fn);
  }
};

// Attentive statistics pooling: a tanh bottleneck scores each frame, softmax
// over time yields weights, and the output stacks the weighted mean with the
// weighted standard deviation. The variance is floored at eps.
template <std::floating_point T>
struct AttStatsPool {
  Linear<T> att1;  // [B, C]
  Linear<T> att2;  // [1, B]
  T eps = T(1e-9);

  static AttStatsPool make(std::size_t c, std::size_t bottleneck, std::uint64_t master,
                           const std::string& name) {
    AttStatsPool p;
    p.att1 = Linear<T>::make(c, bottleneck, true, master, name + ".att1");
    p.att2 = Linear<T>::make(bottleneck, 1, true, master, name + ".att2");
    return p;
  }

  // [C, T] -> [2C, 1]
  Var<T> forward(Ctx<T>& ctx, Var<T> x) {
    Var<T> scores = att2.forward(ctx, ag::tanh(att1.forward(ctx, x)));  // [1, T]
    Var<T> alpha = ag::softmax(scores, 1);
    Var<T> mu = ag::reduce_sum(ag::mul(x, alpha), 1);                 // [C,1]
    Var<T> m2 = ag::reduce_sum(ag::mul(ag::mul(x, x), alpha), 1);     // [C,1]
    Var<T> var = ag::relu(ag::sub(m2, ag::mul(mu, mu)));
    Var<T> sd = ag::sqrt(ag::add_const(var, eps));
    return ag::concat_channels<T>({mu, sd});
  }

  template <class F>
  void visit(const std::string& prefix, F&& fn) {
    att1.visit(prefix + ".att1", fn);
    att2.visit(prefix + ".att2", fn);
  }
};

// Learnable softmax-weighted sum over a stack of feature layers [L, C, T],
// the front-end aggregation feeding a back-end.
template <std::floating_point T>
struct LayerAggregator {
  Tensor<T> logits;  // [L]

  static LayerAggregator make(std::size_t layers) {
    LayerAggregator a;
    a.logits = Tensor<T>({layers});
    return a;
  }

  // [L, C, T] -> [C, T]
  Var<T> forward(Ctx<T>& ctx, Var<T> stack) {
    Shape s = stack.value().shape();  // copy: recording nodes may reallocate
    if (s.size() != 3 || s[0] != logits.extent(0))
      throw std::invalid_argument("layer_aggregator: expected [L,C,T] with L = " +
                                  std::to_string(logits.extent(0)) + ", got " + shape_str(s));
    Var<T> w = ag::softmax(ctx.param(logits), 0);
    auto slices = ag::split_channels(stack, s[0]);
    std::vector<Var<T>> flat;
    flat.reserve(slices.size());
    for (auto& sl : slices) flat.push_back(ag::reshape(sl, {s[1], s[2]}));
    return ag::weighted_stack_sum(flat, w);
  }

  Tensor<T> weights() const {
    Tensor<T> w(logits.shape());
    T mx = logits[0];
    for (std::size_t i = 1; i < w.numel(); ++i) mx = std::max(mx, logits[i]);
    T z = 0;
    for (std::size_t i = 0; i < w.numel(); ++i) {
      w[i] = std::exp(logits[i] - mx);
      z += w[i];
    }
    for (std::size_t i = 0; i < w.numel(); ++i) w[i] /= z;
    return w;
  }

  template <class F>
  void visit(const std::string& prefix, F&& fn) {
    fn(prefix + ".logits", logits);
  }
};

}  // namespace n2n
