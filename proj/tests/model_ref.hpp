// Copyright 2026 the nes2net authors
// SPDX-License-Identifier: Apache-2.0
//
// Straight-line reference implementations used as independent oracles for
// the model tests. Everything here works on plain tensors with explicit
// loops; nothing touches the tape. The block and trunk references are
// written directly from the recurrences in the model documentation:
//   outer chain:  y_1 = x_1, y_2 = K_2(x_2), y_i = K_i(x_i + y_{i-1})
//   nested layer: z_1 = h_1, z_j = M_j(h_j + z_{j-1}) for j >= 2
//   fused form:   z_j = BN/ReLU(w1 conv(h_j) + w2 conv(z_{j-1}))
//   baseline:     z_1 = h_1, z_2 = M_2(h_2), z_j = M_j(h_j + z_{j-1}) j >= 3
#pragma once

#include <cmath>
#include <vector>

#include "nes2net/model.hpp"

namespace ref {

using n2n::Model;
using n2n::ScaleBlock;
using n2n::Shape;
using n2n::Tensor;

template <class T>
Tensor<T> matmul_ref(const Tensor<T>& a, const Tensor<T>& b) {
  std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  Tensor<T> c({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += a(i, p) * b(p, j);
      c(i, j) = acc;
    }
  return c;
}

template <class T>
Tensor<T> linear_ref(const n2n::Linear<T>& l, const Tensor<T>& x) {
  Tensor<T> y = matmul_ref(l.w, x);
  if (!l.b.empty())
    for (std::size_t i = 0; i < y.extent(0); ++i)
      for (std::size_t t = 0; t < y.extent(1); ++t) y(i, t) += l.b[i];
  return y;
}

template <class T>
Tensor<T> conv1d_ref(const Tensor<T>& x, const Tensor<T>& w, std::size_t pad) {
  std::size_t cin = x.extent(0), tin = x.extent(1);
  std::size_t cout = w.extent(0), k = w.extent(2);
  std::size_t tout = tin + 2 * pad - (k - 1);
  Tensor<T> y({cout, tout});
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t t = 0; t < tout; ++t) {
      T acc = 0;
      for (std::size_t ci = 0; ci < cin; ++ci)
        for (std::size_t q = 0; q < k; ++q) {
          std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + q) - static_cast<std::ptrdiff_t>(pad);
          if (src >= 0 && src < static_cast<std::ptrdiff_t>(tin))
            acc += w(co, ci, q) * x(ci, static_cast<std::size_t>(src));
        }
      y(co, t) = acc;
    }
  return y;
}

template <class T>
Tensor<T> relu_ref(Tensor<T> x) {
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = x[i] > 0 ? x[i] : T(0);
  return x;
}

template <class T>
Tensor<T> bn_eval_ref(const n2n::BatchNorm1d<T>& bn, const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t c = 0; c < x.extent(0); ++c) {
    T inv = T(1) / std::sqrt(bn.running_var[c] + bn.eps);
    for (std::size_t t = 0; t < x.extent(1); ++t)
      y(c, t) = bn.gamma[c] * (x(c, t) - bn.running_mean[c]) * inv + bn.beta[c];
  }
  return y;
}

template <class T>
Tensor<T> bn_train_ref(const n2n::BatchNorm1d<T>& bn, const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  std::size_t tn = x.extent(1);
  for (std::size_t c = 0; c < x.extent(0); ++c) {
    T mean = 0;
    for (std::size_t t = 0; t < tn; ++t) mean += x(c, t);
    mean /= static_cast<T>(tn);
    T var = 0;
    for (std::size_t t = 0; t < tn; ++t) var += (x(c, t) - mean) * (x(c, t) - mean);
    var /= static_cast<T>(tn);
    T inv = T(1) / std::sqrt(var + bn.eps);
    for (std::size_t t = 0; t < tn; ++t)
      y(c, t) = bn.gamma[c] * (x(c, t) - mean) * inv + bn.beta[c];
  }
  return y;
}

template <class T>
Tensor<T> se_ref(const n2n::SEBlock<T>& se, const Tensor<T>& x) {
  std::size_t c = x.extent(0), tn = x.extent(1);
  Tensor<T> s({c, 1});
  for (std::size_t i = 0; i < c; ++i) {
    T acc = 0;
    for (std::size_t t = 0; t < tn; ++t) acc += x(i, t);
    s(i, 0) = acc / static_cast<T>(tn);
  }
  Tensor<T> h = relu_ref(linear_ref(se.fc1, s));
  Tensor<T> g = linear_ref(se.fc2, h);
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < c; ++i) {
    T gate = T(1) / (T(1) + std::exp(-g(i, 0)));
    for (std::size_t t = 0; t < tn; ++t) y(i, t) = x(i, t) * gate;
  }
  return y;
}

template <class T>
Tensor<T> rows_ref(const Tensor<T>& x, std::size_t r0, std::size_t r1) {
  Tensor<T> y({r1 - r0, x.extent(1)});
  for (std::size_t r = r0; r < r1; ++r)
    for (std::size_t t = 0; t < x.extent(1); ++t) y(r - r0, t) = x(r, t);
  return y;
}

template <class T>
Tensor<T> add_ref(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) y[i] = a[i] + b[i];
  return y;
}

template <class T>
Tensor<T> concat_rows_ref(const std::vector<Tensor<T>>& parts) {
  std::size_t rows = 0, tn = parts[0].extent(1);
  for (const auto& p : parts) rows += p.extent(0);
  Tensor<T> y({rows, tn});
  std::size_t r0 = 0;
  for (const auto& p : parts) {
    for (std::size_t r = 0; r < p.extent(0); ++r)
      for (std::size_t t = 0; t < tn; ++t) y(r0 + r, t) = p(r, t);
    r0 += p.extent(0);
  }
  return y;
}

// One split-transform-merge block in eval mode, written from the recurrences.
template <class T>
Tensor<T> scale_block_ref(const ScaleBlock<T>& b, const Tensor<T>& x) {
  Tensor<T> h = x;
  if (b.conv_in) h = relu_ref(bn_eval_ref(*b.bn_in, conv1d_ref(x, b.conv_in->w, 0)));
  std::size_t g = b.mid / b.scale;
  std::vector<Tensor<T>> z(b.scale);
  z[0] = rows_ref(h, 0, g);
  for (std::size_t j = 2; j <= b.scale; ++j) {
    Tensor<T> hj = rows_ref(h, (j - 1) * g, j * g);
    const auto& conv = b.gconv[j - 2];
    Tensor<T> pre;
    if (b.fused) {
      T w0 = b.fuse[j - 2][0], w1 = b.fuse[j - 2][1];
      if (b.fusion_softmax) {
        T m = std::max(w0, w1);
        T e0 = std::exp(w0 - m), e1 = std::exp(w1 - m);
        w0 = e0 / (e0 + e1);
        w1 = e1 / (e0 + e1);
      }
      Tensor<T> c_cur = conv1d_ref(hj, conv.w, conv.pad);
      pre = Tensor<T>(c_cur.shape());
      if (j > 2 || b.accumulate_first) {
        Tensor<T> c_prev = conv1d_ref(z[j - 2], conv.w, conv.pad);
        for (std::size_t i = 0; i < pre.numel(); ++i) pre[i] = w0 * c_cur[i] + w1 * c_prev[i];
      } else {
        for (std::size_t i = 0; i < pre.numel(); ++i) pre[i] = w0 * c_cur[i];
      }
    } else {
      Tensor<T> in = (j > 2 || b.accumulate_first) ? add_ref(hj, z[j - 2]) : hj;
      pre = conv1d_ref(in, conv.w, conv.pad);
    }
    z[j - 1] = relu_ref(bn_eval_ref(b.gbn[j - 2], pre));
  }
  Tensor<T> y = concat_rows_ref(z);
  if (b.conv_out) y = bn_eval_ref(*b.bn_out, conv1d_ref(y, b.conv_out->w, 0));
  y = se_ref(b.se, y);
  return add_ref(y, x);
}

// Eval-mode trunk: outer chain for nested variants, sequential stack for
// baselines.
template <class T>
Tensor<T> trunk_ref(const Model<T>& m, const Tensor<T>& x) {
  if (m.cfg.nested()) {
    std::size_t c = m.cfg.input_dim / m.cfg.s1;
    std::vector<Tensor<T>> y(m.cfg.s1);
    y[0] = rows_ref(x, 0, c);
    for (std::size_t i = 2; i <= m.cfg.s1; ++i) {
      Tensor<T> xi = rows_ref(x, (i - 1) * c, i * c);
      Tensor<T> in = i == 2 ? xi : add_ref(xi, y[i - 2]);
      y[i - 1] = scale_block_ref(m.blocks[i - 2], in);
    }
    return concat_rows_ref(y);
  }
  Tensor<T> h = x;
  if (m.dr) h = linear_ref(*m.dr, h);
  for (const auto& b : m.blocks) h = scale_block_ref(b, h);
  return h;
}

template <class T>
Tensor<T> pool_ref(const n2n::AttStatsPool<T>& p, const Tensor<T>& x) {
  std::size_t c = x.extent(0), tn = x.extent(1);
  Tensor<T> scores = linear_ref(p.att2, [&] {
    Tensor<T> h = linear_ref(p.att1, x);
    for (std::size_t i = 0; i < h.numel(); ++i) h[i] = std::tanh(h[i]);
    return h;
  }());
  T mx = scores[0];
  for (std::size_t t = 1; t < tn; ++t) mx = std::max(mx, scores[t]);
  std::vector<T> alpha(tn);
  T zsum = 0;
  for (std::size_t t = 0; t < tn; ++t) {
    alpha[t] = std::exp(scores[t] - mx);
    zsum += alpha[t];
  }
  for (auto& a : alpha) a /= zsum;
  Tensor<T> out({2 * c, 1});
  for (std::size_t i = 0; i < c; ++i) {
    T mu = 0, m2 = 0;
    for (std::size_t t = 0; t < tn; ++t) {
      mu += alpha[t] * x(i, t);
      m2 += alpha[t] * x(i, t) * x(i, t);
    }
    T var = m2 - mu * mu;
    if (var < 0) var = 0;
    out(i, 0) = mu;
    out(c + i, 0) = std::sqrt(var + p.eps);
  }
  return out;
}

// Full eval-mode forward to logits.
template <class T>
Tensor<T> forward_ref(const Model<T>& m, const Tensor<T>& x) {
  Tensor<T> pooled = pool_ref(m.pool, trunk_ref(m, x));
  Tensor<T> h = pooled;
  if (m.emb) h = relu_ref(linear_ref(*m.emb, pooled));
  Tensor<T> logits = linear_ref(m.cls, h);
  return logits.reshaped({m.cfg.num_classes});
}

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  T worst = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

template <class T>
Tensor<T> random_input(const Shape& s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Tensor<T> x(s);
  n2n::Rng rng(seed);
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = static_cast<T>(rng.uniform(lo, hi));
  return x;
}

}  // namespace ref
