// Copyright 2026 the nes2net authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode autodiff on a linear tape. Recording order is topological
// order (an op can only consume already-recorded nodes), so the backward
// sweep is a single reverse pass. One tape serves one thread; independent
// tapes may run on separate threads.
//
// Conventions baked in here and relied on elsewhere:
//   * conv1d is cross-correlation (no kernel flip), stride 1.
//   * broadcasting needs equal rank; size-1 axes repeat.
//   * reductions keep the reduced axis with extent 1.
//   * matmul, conv1d and weighted_stack_sum report MACs to an installed
//     counter during the forward computation; nothing else does.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "nes2net/macs.hpp"
#include "nes2net/tensor.hpp"

namespace n2n {

template <std::floating_point T>
class Tape;

template <std::floating_point T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  bool valid() const { return tape != nullptr; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
};

template <std::floating_point T>
class Tape {
 public:
  struct Node {
    const char* op;
    std::vector<std::size_t> inputs;
    Tensor<T> value;
    bool requires_grad = false;
    std::function<void(Tape&, std::size_t)> backward;  // empty for leaves
  };

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var<T> leaf(Tensor<T> v, bool requires_grad = false) {
    Node n;
    n.op = "leaf";
    n.value = std::move(v);
    n.requires_grad = requires_grad && grad_enabled_;
    return push(std::move(n));
  }

  const Node& node(std::size_t id) const { return nodes_[id]; }
  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient of `v` from the last backward pass; zeros if it never received one.
  Tensor<T> grad(const Var<T>& v) const {
    if (v.id < grads_.size() && !grads_[v.id].empty()) return grads_[v.id];
    return Tensor<T>(nodes_[v.id].value.shape());
  }

  void backward(const Var<T>& loss) {
    if (!grad_enabled_) throw std::runtime_error("tape: backward on a no-grad tape");
    if (consumed_) throw std::runtime_error("tape: backward called twice without re-recording");
    if (loss.value().numel() != 1)
      throw std::runtime_error("tape: backward requires a scalar, got " +
                               shape_str(loss.value().shape()));
    consumed_ = true;
    grads_.assign(nodes_.size(), Tensor<T>());
    grads_[loss.id] = Tensor<T>::full(loss.value().shape(), T(1));
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (grads_[id].empty() || !n.backward) continue;
      n.backward(*this, id);
    }
  }

  // Truncates back to `mark` nodes and re-arms backward. Used to reuse one
  // tape across training steps or finite-difference evaluations.
  std::size_t mark() const { return nodes_.size(); }
  void truncate(std::size_t mark) {
    nodes_.resize(mark);
    grads_.clear();
    consumed_ = false;
  }

  // --- internals used by the op layer ---

  Var<T> push(Node n) {
    nodes_.push_back(std::move(n));
    return Var<T>{this, nodes_.size() - 1};
  }

  bool any_requires_grad(const std::vector<std::size_t>& ids) const {
    for (auto i : ids)
      if (nodes_[i].requires_grad) return true;
    return false;
  }

  // Accumulation buffer for node `id`, allocated on first use.
  Tensor<T>& grad_buf(std::size_t id) {
    if (grads_[id].empty()) grads_[id] = Tensor<T>(nodes_[id].value.shape());
    return grads_[id];
  }
  const Tensor<T>& out_grad(std::size_t id) const { return grads_[id]; }

 private:
  std::vector<Node> nodes_;
  std::vector<Tensor<T>> grads_;
  bool grad_enabled_;
  bool consumed_ = false;
};

template <std::floating_point T>
const Tensor<T>& Var<T>::value() const {
  return tape->value(id);
}

namespace ag {

namespace detail {

// Odometer over an output shape yielding flat offsets into two broadcast
// operands (stride 0 on their size-1 axes).
template <std::floating_point T, class F>
void broadcast_loop(const Shape& out, const Shape& a, const Shape& b, F&& f) {
  std::size_t rank = out.size(), n = shape_numel(out);
  std::vector<std::size_t> coord(rank, 0), sa(rank), sb(rank);
  std::size_t stride = 1;
  for (std::size_t i = rank; i-- > 0;) {
    sa[i] = (a[i] == 1) ? 0 : stride;
    stride *= a[i];
  }
  stride = 1;
  for (std::size_t i = rank; i-- > 0;) {
    sb[i] = (b[i] == 1) ? 0 : stride;
    stride *= b[i];
  }
  std::size_t ia = 0, ib = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    f(flat, ia, ib);
    for (std::size_t i = rank; i-- > 0;) {
      ++coord[i];
      ia += sa[i];
      ib += sb[i];
      if (coord[i] < out[i]) break;
      ia -= sa[i] * out[i];
      ib -= sb[i] * out[i];
      coord[i] = 0;
    }
  }
}

template <std::floating_point T>
Var<T> binary(const char* name, Var<T> a, Var<T> b, T (*fwd)(T, T),
              void (*bwd)(T av, T bv, T g, T& da, T& db)) {
  Tape<T>& tp = *a.tape;
  const Tensor<T>&av = a.value(), &bv = b.value();
  Shape out_shape;
  if (!broadcast_shapes(av.shape(), bv.shape(), out_shape))
    throw std::invalid_argument(std::string(name) + ": shapes " + shape_str(av.shape()) +
                                " and " + shape_str(bv.shape()) + " do not broadcast");
  Tensor<T> out(out_shape);
  if (av.same_shape(bv)) {
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = fwd(av[i], bv[i]);
  } else {
    broadcast_loop<T>(out_shape, av.shape(), bv.shape(),
                      [&](std::size_t o, std::size_t ia, std::size_t ib) {
                        out[o] = fwd(av[ia], bv[ib]);
                      });
  }
  typename Tape<T>::Node n;
  n.op = name;
  n.inputs = {a.id, b.id};
  n.value = std::move(out);
  n.requires_grad = tp.any_requires_grad(n.inputs);
  if (n.requires_grad)
    n.backward = [bwd](Tape<T>& t, std::size_t id) {
      const auto& nd = t.node(id);
      const Tensor<T>& g = t.out_grad(id);
      const Tensor<T>&av2 = t.value(nd.inputs[0]), &bv2 = t.value(nd.inputs[1]);
      bool need_a = t.node(nd.inputs[0]).requires_grad;
      bool need_b = t.node(nd.inputs[1]).requires_grad;
      Tensor<T>* da = need_a ? &t.grad_buf(nd.inputs[0]) : nullptr;
      Tensor<T>* db = need_b ? &t.grad_buf(nd.inputs[1]) : nullptr;
      broadcast_loop<T>(g.shape(), av2.shape(), bv2.shape(),
                        [&](std::size_t o, std::size_t ia, std::size_t ib) {
                          T ea = 0, eb = 0;
                          bwd(av2[ia], bv2[ib], g[o], ea, eb);
                          if (da) (*da)[ia] += ea;
                          if (db) (*db)[ib] += eb;
                        });
    };
  return tp.push(std::move(n));
}

template <std::floating_point T>
Var<T> unary(const char* name, Var<T> a, T (*fwd)(T), T (*bwd)(T x, T y, T g)) {
  Tape<T>& tp = *a.tape;
  const Tensor<T>& av = a.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = fwd(av[i]);
  typename Tape<T>::Node n;
  n.op = name;
  n.inputs = {a.id};
  n.value = std::move(out);
  n.requires_grad = tp.node(a.id).requires_grad;
  if (n.requires_grad)
    n.backward = [bwd](Tape<T>& t, std::size_t id) {
      const auto& nd = t.node(id);
      const Tensor<T>& g = t.out_grad(id);
      const Tensor<T>& x = t.value(nd.inputs[0]);
      const Tensor<T>& y = nd.value;
      Tensor<T>& dx = t.grad_buf(nd.inputs[0]);
      for (std::size_t i = 0; i < g.numel(); ++i) dx[i] += bwd(x[i], y[i], g[i]);
    };
  return tp.push(std::move(n));
}

}  // namespace detail

template <std::floating_point T>
Var<T> add(Var<T> a, Var<T> b) {
  return detail::binary<T>(
      "add", a, b, [](T x, T y) { return x + y; },
      [](T, T, T g, T& da, T& db) {
        da = g;
        db = g;
      });
}

template <std::floating_point T>
Var<T> sub(Var<T> a, Var<T> b) {
  return detail::binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; },
      [](T, T, T g, T& da, T& db) {
        da = g;
        db = -g;
      });
}

template <std::floating_point T>
Var<T> mul(Var<T> a, Var<T> b) {
  return detail::binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; },
      [](T x, T y, T g, T& da, T& db) {
        da = g * y;
        db = g * x;
      });
}

template <std::floating_point T>
Var<T> div(Var<T> a, Var<T> b) {
  return detail::binary<T>(
      "div", a, b, [](T x, T y) { return x / y; },
      [](T x, T y, T g, T& da, T& db) {
        da = g / y;
        db = -g * x / (y * y);
      });
}

template <std::floating_point T>
Var<T> scale(Var<T> a, T c) {
  Tape<T>& tp = *a.tape;
  const Tensor<T>& av = a.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * c;
  typename Tape<T>::Node n;
  n.op = "scale";
  n.inputs = {a.id};
  n.value = std::move(out);
  n.requires_grad = tp.node(a.id).requires_grad;
  if (n.requires_grad)
    n.backward = [c](Tape<T>& t, std::size_t id) {
      const auto& nd = t.node(id);
      const Tensor<T>& g = t.out_grad(id);
      Tensor<T>& dx = t.grad_buf(nd.inputs[0]);
      for (std::size_t i = 0; i < g.numel(); ++i) dx[i] += g[i] * c;
    };
  return tp.push(std::move(n));
}

template <std::floating_point T>
Var<T> add_const(Var<T> a, T c) {
  Tape<T>& tp = *a.tape;
  const Tensor<T>& av = a.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] + c;
  typename Tape<T>::Node n;
  n.op = "add_const";
  n.inputs = {a.id};
  n.value = std::move(out);
  n.requires_grad = tp.node(a.id).requires_grad;
  if (n.requires_grad)
    n.backward = [](Tape<T>& t, std::size_t id) {
      const auto& nd = t.node(id);
      const Tensor<T>& g = t.out_grad(id);
      Tensor<T>& dx = t.grad_buf(nd.inputs[0]);
      for (std::size_t i = 0; i < g.numel(); ++i) dx[i] += g[i];
    };
  return tp.push(std::move(n));
}

template <std::floating_point T>
Var<T> neg(Var<T> a) {
  return scale(a, T(-1));
}

template <std::floating_point T>
Var<T> relu(Var<T> a) {
  return detail::unary<T>(
      "relu", a, [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T, T g) { return x > T(0) ? g : T(0); });
}

template <std::floating_point T>
Var<T> sigmoid(Var<T> a) {
  return detail::unary<T>(
      "sigmoid", a,
      [](T x) {
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y, T g) { return g * y * (T(1) - y); });
}

template <std::floating_point T>
Var<T> tanh(Var<T> a) {
  return detail::unary<T>(
      "tanh", a, [](T x) { return std::tanh(x); },
      [](T, T y, T g) { return g * (T(1) - y * y); });
}

template <std::floating_point T>
Var<T> exp(Var<T> a) {
  return detail::unary<T>(
      "exp", a, [](T x) { return std::exp(x); }, [](T, T y, T g) { return g * y; });
}

template <std::floating_point T>
Var<T> log(Var<T> a) {
  const Tensor<T>& av = a.value();
  for (std::size_t i = 0; i < av.numel(); ++i)
    if (!(av[i] > T(0))) throw std::domain_error("log: input must be positive");
  return detail::unary<T>(
      "log", a, [](T x) { return std::log(x); }, [](T x, T, T g) { return g / x; });
}

template <std::floating_point T>
Var<T> sqrt(Var<T> a) {
  const Tensor<T>& av = a.value();
  for (std::size_t i = 0; i < av.numel(); ++i)
    if (av[i] < T(0)) throw std::domain_error("sqrt: input must be non-negative");
  return detail::unary<T>(
      "sqrt", a, [](T x) { return std::sqrt(x); },
      [](T, T y, T g) { return g / (T(2) * y); });
}

// y = x^p for constant exponent p; x must be positive unless p is a
// non-negative integer.
template <std::floating_point T>
Var<T> pow_const(Var<T> a, T p) {
  Tape<T>& tp = *a.tape;
  const Tensor<T>& av = a.value();
  bool integer_p = p == std::floor(p) && p >= T(0);
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    if (av[i] < T(0) && !integer_p)
      throw std::domain_error("pow_const: negative base with non-integer exponent");
    out[i] = std::pow(av[i], p);
  }
  typename Tape<T>::Node n;
  n.op = "pow_const";
  n.inputs = {a.id};
  n.value = std::move(out);
  n.requires_grad = tp.node(a.id).requires_grad;
  if (n.requires_grad)
    n.backward = [p](Tape<T>& t, std::size_t id) {
      const auto& nd = t.node(id);
      const Tensor<T>& g = t.out_grad(id);
      const Tensor<T>& x = t.value(nd.inputs[0]);
      Tensor<T>& dx = t.grad_buf(nd.inputs[0]);
      if (p == T(0)) return;
      for (std::size_t i = 0; i < g.numel(); ++i)
        dx[i] += g[i] * p * std::pow(x[i], p - T(1));
    };
  return tp.push(std::move(n));
}

template <std::floating_point T>
Var<T> reshape(Var<T> a, Shape shape) {
  Tape<T>& tp = *a.tape;
  typename Tape<T>::Node n;
  n.op = "reshape";
  n.inputs = {a.id};
  n.value = a.value().reshaped(shape);
  n.requires_grad = tp.node(a.id).requires_grad;
  if (n.requires_grad)
    n.backward = [](Tape<T>& t, std::size_t id) {
      const auto& nd = t.node(id);
      const Tensor<T>& g = t.out_grad(id);
      Tensor<T>& dx = t.grad_buf(nd.inputs[0]);
      for (std::size_t i = 0; i < g.numel(); ++i) dx[i] += g[i];
    };
  return tp.push(std::move(n));
}

// A[m,k] x B[k,n] -> [m,n]. Reports m*k*n MACs.
template <std::floating_point T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& tp = *a.tape;
  const Tensor<T>&A = a.value(), &B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.extent(1) != B.extent(0))
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(A.shape()) + " x " +
                                shape_str(B.shape()));
  std::size_t m = A.extent(0), k = A.extent(1), nn = B.extent(1);
  Tensor<T> out({m, nn});
  for (std::size_t i = 0; i < m; ++i) {
    T* orow = out.data() + i * nn;
    for (std::size_t p = 0; p < k; ++p) {
      T av = A[i * k + p];
      const T* brow = B.data() + p * nn;
      for (std::size_t j = 0; j < nn; ++j) orow[j] += av * brow[j];
    }
  }
  count_macs_now(static_cast<std::uint64_t>(m) * k * nn);
  typename Tape<T>::Node n;
  n.op = "matmul";
  n.inputs = {a.id, b.id};
  n.value = std::move(out);
  n.requires_grad = tp.any_requires_grad(n.inputs);
  if (n.requires_grad)
    n.backward = [m, k, nn](Tape<T>& t, std::size_t id) {
      const auto& nd = t.node(id);
      const Tensor<T>& g = t.out_grad(id);
      const Tensor<T>&A2 = t.value(nd.inputs[0]), &B2 = t.value(nd.inputs[1]);
      if (t.node(nd.inputs[0]).requires_grad) {
        Tensor<T>& dA = t.grad_buf(nd.inputs[0]);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            T acc = 0;
            const T* grow = g.data() + i * nn;
            const T* brow = B2.data() + p * nn;
            for (std::size_t j = 0; j < nn; ++j) acc += grow[j] * brow[j];
            dA[i * k + p] += acc;
          }
      }
      if (t.node(nd.inputs[1]).requires_grad) {
        Tensor<T>& dB = t.grad_buf(nd.inputs[1]);
        for (std::size_t i = 0; i < m; ++i) {
          const T* grow = g.data() + i * nn;
          for (std::size_t p = 0; p < k; ++p) {
            T av = A2[i * k + p];
            T* brow = dB.data() + p * nn;
            for (std::size_t j = 0; j < nn; ++j) brow[j] += av * grow[j];
          }
        }
      }
    };
  return tp.push(std::move(n));
}

// Cross-correlation: y[o,t] = sum_{c,q} w[o,c,q] * x[c, t - pad + q*dil],
// zeros outside. x:[Cin,T], w:[Cout,Cin,k] -> [Cout, T + 2*pad - dil*(k-1)].
// Reports Cout*Cin*k*Tout MACs (padded positions included, per convention).
template <std::floating_point T>
Var<T> conv1d(Var<T> x, Var<T> w, std::size_t pad, std::size_t dil = 1) {
  Tape<T>& tp = *x.tape;
  const Tensor<T>&X = x.value(), &W = w.value();
  if (X.rank() != 2 || W.rank() != 3 || X.extent(0) != W.extent(1))
    throw std::invalid_argument("conv1d: incompatible shapes " + shape_str(X.shape()) + ", " +
                                shape_str(W.shape()));
  std::size_t cin = X.extent(0), tin = X.extent(1);
  std::size_t cout = W.extent(0), kk = W.extent(2);
  std::size_t span = dil * (kk - 1);
  if (tin + 2 * pad < span + 1) throw std::invalid_argument("conv1d: kernel span exceeds input");
  std::size_t tout = tin + 2 * pad - span;
  Tensor<T> out({cout, tout});
  for (std::size_t o = 0; o < cout; ++o) {
    T* orow = out.data() + o * tout;
    for (std::size_t c = 0; c < cin; ++c) {
      const T* xrow = X.data() + c * tin;
      const T* wrow = W.data() + (o * cin + c) * kk;
      for (std::size_t q = 0; q < kk; ++q) {
        T wv = wrow[q];
        // y[t] += wv * x[t - pad + q*dil] over the t window where x is in range
        std::ptrdiff_t off = static_cast<std::ptrdiff_t>(q * dil) - static_cast<std::ptrdiff_t>(pad);
        std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, -off);
        std::ptrdiff_t t1 = std::min<std::ptrdiff_t>(tout, static_cast<std::ptrdiff_t>(tin) - off);
        for (std::ptrdiff_t t = t0; t < t1; ++t) orow[t] += wv * xrow[t + off];
      }
    }
  }
  count_macs_now(static_cast<std::uint64_t>(cout) * cin * kk * tout);
  typename Tape<T>::Node n;
  n.op = "conv1d";
  n.inputs = {x.id, w.id};
  n.value = std::move(out);
  n.requires_grad = tp.any_requires_grad(n.inputs);
  if (n.requires_grad)
    n.backward = [cin, tin, cout, kk, pad, dil, tout](Tape<T>& t, std::size_t id) {
      const auto& nd = t.node(id);
      const Tensor<T>& g = t.out_grad(id);
      const Tensor<T>&X2 = t.value(nd.inputs[0]), &W2 = t.value(nd.inputs[1]);
      bool need_x = t.node(nd.inputs[0]).requires_grad;
      bool need_w = t.node(nd.inputs[1]).requires_grad;
      Tensor<T>* dX = need_x ? &t.grad_buf(nd.inputs[0]) : nullptr;
      Tensor<T>* dW = need_w ? &t.grad_buf(nd.inputs[1]) : nullptr;
      for (std::size_t o = 0; o < cout; ++o) {
        const T* grow = g.data() + o * tout;
        for (std::size_t c = 0; c < cin; ++c) {
          const T* xrow = X2.data() + c * tin;
          const T* wrow = W2.data() + (o * cin + c) * kk;
          T* dxrow = need_x ? dX->data() + c * tin : nullptr;
          T* dwrow = need_w ? dW->data() + (o * cin + c) * kk : nullptr;
          for (std::size_t q = 0; q < kk; ++q) {
            std::ptrdiff_t off =
                static_cast<std::ptrdiff_t>(q * dil) - static_cast<std::ptrdiff_t>(pad);
            std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, -off);
            std::ptrdiff_t t1 =
                std::min<std::ptrdiff_t>(tout, static_cast<std::ptrdiff_t>(tin) - off);
            if (need_w) {
              T acc = 0;
              for (std::ptrdiff_t tt = t0; tt < t1; ++tt) acc += grow[tt] * xrow[tt + off];
              dwrow[q] += acc;
            }
            if (need_x) {
              T wv = wrow[q];
              for (std::ptrdiff_t tt = t0; tt < t1; ++tt) dxrow[tt + off] += wv * grow[tt];
            }
          }
        }
      }
    };
  return tp.push(std::move(n));
}

// Splits axis 0 into `parts` equal slices.
template <std::floating_point T>
std::vector<Var<T>> split_channels(Var<T> x, std::size_t parts) {
  Tape<T>& tp = *x.tape;
  const Tensor<T>& X = x.value();
  if (X.rank() < 1 || parts == 0 || X.extent(0) % parts != 0)
    throw std::invalid_argument("split_channels: " + std::to_string(parts) +
                                " must evenly divide leading extent of " + shape_str(X.shape()));
  std::size_t c = X.extent(0), block = c / parts, inner = X.numel() / c;
  // Slice everything before recording: push() may reallocate the node store
  // and invalidate the reference to X.
  std::vector<Tensor<T>> pieces;
  pieces.reserve(parts);
  for (std::size_t p = 0; p < parts; ++p) {
    Shape s = X.shape();
    s[0] = block;
    Tensor<T> piece(s);
    std::size_t base = p * block * inner;
    for (std::size_t i = 0; i < piece.numel(); ++i) piece[i] = X[base + i];
    pieces.push_back(std::move(piece));
  }
  bool needs_grad = tp.node(x.id).requires_grad;
  std::vector<Var<T>> out;
  out.reserve(parts);
  for (std::size_t p = 0; p < parts; ++p) {
    std::size_t base = p * block * inner;
    typename Tape<T>::Node n;
    n.op = "split";
    n.inputs = {x.id};
    n.value = std::move(pieces[p]);
    n.requires_grad = needs_grad;
    if (n.requires_grad)
      n.backward = [base](Tape<T>& t, std::size_t id) {
        const auto& nd = t.node(id);
        const Tensor<T>& g = t.out_grad(id);
        Tensor<T>& dx = t.grad_buf(nd.inputs[0]);
        for (std::size_t i = 0; i < g.numel(); ++i) dx[base + i] += g[i];
      };
    out.push_back(tp.push(std::move(n)));
  }
  return out;
}

// Concatenates along axis 0; trailing extents must match.
template <std::floating_point T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  Tape<T>& tp = *parts[0].tape;
  Shape s = parts[0].value().shape();
  std::size_t c0 = 0;
  for (const auto& p : parts) {
    const Shape& ps = p.value().shape();
    if (ps.size() != s.size()) throw std::invalid_argument("concat_channels: rank mismatch");
    for (std::size_t i = 1; i < s.size(); ++i)
      if (ps[i] != s[i]) throw std::invalid_argument("concat_channels: trailing extent mismatch");
    c0 += ps[0];
  }
  s[0] = c0;
  Tensor<T> out(s);
  std::vector<std::size_t> ids, bases;
  std::size_t at = 0;
  for (const auto& p : parts) {
    const Tensor<T>& pv = p.value();
    for (std::size_t i = 0; i < pv.numel(); ++i) out[at + i] = pv[i];
    ids.push_back(p.id);
    bases.push_back(at);
    at += pv.numel();
  }
  typename Tape<T>::Node n;
  n.op = "concat";
  n.inputs = ids;
  n.value = std::move(out);
  n.requires_grad = tp.any_requires_grad(ids);
  if (n.requires_grad)
    n.backward = [bases](Tape<T>& t, std::size_t id) {
      const auto& nd = t.node(id);
      const Tensor<T>& g = t.out_grad(id);
      for (std::size_t p = 0; p < nd.inputs.size(); ++p) {
        if (!t.node(nd.inputs[p]).requires_grad) continue;
        Tensor<T>& dp = t.grad_buf(nd.inputs[p]);
        for (std::size_t i = 0; i < dp.numel(); ++i) dp[i] += g[bases[p] + i];
      }
    };
  return tp.push(std::move(n));
}

namespace detail {
template <std::floating_point T, class Each>
void axis_loop(const Shape& s, std::size_t axis, Each&& each) {
  std::size_t n = s[axis], inner = 1, outer = 1;
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) each(o * n * inner + in, inner, n, o * inner + in);
}
}  // namespace detail

// Sum over `axis`; the axis is kept with extent 1 so results broadcast back.
template <std::floating_point T>
Var<T> reduce_sum(Var<T> a, std::size_t axis) {
  Tape<T>& tp = *a.tape;
  const Tensor<T>& av = a.value();
  if (axis >= av.rank()) throw std::invalid_argument("reduce_sum: axis out of range");
  Shape os = av.shape();
  os[axis] = 1;
  Tensor<T> out(os);
  detail::axis_loop<T>(av.shape(), axis,
                       [&](std::size_t base, std::size_t stride, std::size_t n, std::size_t oi) {
                         T acc = 0;
                         for (std::size_t i = 0; i < n; ++i) acc += av[base + i * stride];
                         out[oi] = acc;
                       });
  typename Tape<T>::Node n;
  n.op = "reduce_sum";
  n.inputs = {a.id};
  n.value = std::move(out);
  n.requires_grad = tp.node(a.id).requires_grad;
  if (n.requires_grad)
    n.backward = [axis](Tape<T>& t, std::size_t id) {
      const auto& nd = t.node(id);
      const Tensor<T>& g = t.out_grad(id);
      Tensor<T>& dx = t.grad_buf(nd.inputs[0]);
      detail::axis_loop<T>(dx.shape(), axis,
                           [&](std::size_t base, std::size_t stride, std::size_t nn,
                               std::size_t oi) {
                             for (std::size_t i = 0; i < nn; ++i) dx[base + i * stride] += g[oi];
                           });
    };
  return tp.push(std::move(n));
}

template <std::floating_point T>
Var<T> reduce_mean(Var<T> a, std::size_t axis) {
  std::size_t n = a.value().extent(axis);
  return scale(reduce_sum(a, axis), T(1) / T(n));
}

// Population variance along `axis` (biased, divides by n).
template <std::floating_point T>
Var<T> reduce_var(Var<T> a, std::size_t axis) {
  Var<T> m = reduce_mean(a, axis);
  Var<T> d = sub(a, m);
  return reduce_mean(mul(d, d), axis);
}

// Numerically stable softmax along `axis` with a fused backward:
// dx = y * (g - sum(g * y, axis)).
template <std::floating_point T>
Var<T> softmax(Var<T> a, std::size_t axis) {
  Tape<T>& tp = *a.tape;
  const Tensor<T>& av = a.value();
  if (axis >= av.rank()) throw std::invalid_argument("softmax: axis out of range");
  Tensor<T> out(av.shape());
  detail::axis_loop<T>(av.shape(), axis,
                       [&](std::size_t base, std::size_t stride, std::size_t n, std::size_t) {
                         T mx = av[base];
                         for (std::size_t i = 1; i < n; ++i)
                           mx = std::max(mx, av[base + i * stride]);
                         T z = 0;
                         for (std::size_t i = 0; i < n; ++i) {
                           T e = std::exp(av[base + i * stride] - mx);
                           out[base + i * stride] = e;
                           z += e;
                         }
                         for (std::size_t i = 0; i < n; ++i) out[base + i * stride] /= z;
                       });
  typename Tape<T>::Node n;
  n.op = "softmax";
  n.inputs = {a.id};
  n.value = std::move(out);
  n.requires_grad = tp.node(a.id).requires_grad;
  if (n.requires_grad)
    n.backward = [axis](Tape<T>& t, std::size_t id) {
      const auto& nd = t.node(id);
      const Tensor<T>& g = t.out_grad(id);
      const Tensor<T>& y = nd.value;
      Tensor<T>& dx = t.grad_buf(nd.inputs[0]);
      detail::axis_loop<T>(y.shape(), axis,
                           [&](std::size_t base, std::size_t stride, std::size_t n2,
                               std::size_t) {
                             T dot = 0;
                             for (std::size_t i = 0; i < n2; ++i)
                               dot += g[base + i * stride] * y[base + i * stride];
                             for (std::size_t i = 0; i < n2; ++i)
                               dx[base + i * stride] +=
                                   y[base + i * stride] * (g[base + i * stride] - dot);
                           });
    };
  return tp.push(std::move(n));
}

// Selects one flat element as a [1] tensor.
template <std::floating_point T>
Var<T> pick(Var<T> a, std::size_t index) {
  Tape<T>& tp = *a.tape;
  const Tensor<T>& av = a.value();
  if (index >= av.numel()) throw std::invalid_argument("pick: index out of range");
  typename Tape<T>::Node n;
  n.op = "pick";
  n.inputs = {a.id};
  n.value = Tensor<T>::scalar(av[index]);
  n.requires_grad = tp.node(a.id).requires_grad;
  if (n.requires_grad)
    n.backward = [index](Tape<T>& t, std::size_t id) {
      const auto& nd = t.node(id);
      t.grad_buf(nd.inputs[0])[index] += t.out_grad(id)[0];
    };
  return tp.push(std::move(n));
}

// out = sum_k w[k] * slices[k]; the learnable fusion primitive. Reports
// k * numel(slice) MACs since each w[k] is a weight applied to every element.
template <std::floating_point T>
Var<T> weighted_stack_sum(const std::vector<Var<T>>& slices, Var<T> w) {
  if (slices.empty()) throw std::invalid_argument("weighted_stack_sum: no slices");
  Tape<T>& tp = *slices[0].tape;
  const Tensor<T>& wv = w.value();
  if (wv.rank() != 1 || wv.extent(0) != slices.size())
    throw std::invalid_argument("weighted_stack_sum: weight shape " + shape_str(wv.shape()) +
                                " does not match " + std::to_string(slices.size()) + " slices");
  const Shape& s = slices[0].value().shape();
  for (const auto& sl : slices)
    if (sl.value().shape() != s)
      throw std::invalid_argument("weighted_stack_sum: slice shape mismatch");
  Tensor<T> out(s);
  std::vector<std::size_t> ids;
  for (std::size_t p = 0; p < slices.size(); ++p) {
    const Tensor<T>& sv = slices[p].value();
    T c = wv[p];
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += c * sv[i];
    ids.push_back(slices[p].id);
  }
  count_macs_now(static_cast<std::uint64_t>(slices.size()) * shape_numel(s));
  ids.push_back(w.id);
  typename Tape<T>::Node n;
  n.op = "weighted_stack_sum";
  n.inputs = ids;
  n.value = std::move(out);
  n.requires_grad = tp.any_requires_grad(ids);
  if (n.requires_grad)
    n.backward = [](Tape<T>& t, std::size_t id) {
      const auto& nd = t.node(id);
      const Tensor<T>& g = t.out_grad(id);
      std::size_t ns = nd.inputs.size() - 1;
      std::size_t wid = nd.inputs[ns];
      const Tensor<T>& wv2 = t.value(wid);
      for (std::size_t p = 0; p < ns; ++p) {
        if (t.node(nd.inputs[p]).requires_grad) {
          Tensor<T>& ds = t.grad_buf(nd.inputs[p]);
          T c = wv2[p];
          for (std::size_t i = 0; i < g.numel(); ++i) ds[i] += c * g[i];
        }
      }
      if (t.node(wid).requires_grad) {
        Tensor<T>& dw = t.grad_buf(wid);
        for (std::size_t p = 0; p < ns; ++p) {
          const Tensor<T>& sv = t.value(nd.inputs[p]);
          T acc = 0;
          for (std::size_t i = 0; i < g.numel(); ++i) acc += g[i] * sv[i];
          dw[p] += acc;
        }
      }
    };
  return tp.push(std::move(n));
}

}  // namespace ag

template <std::floating_point T>
Var<T> operator+(Var<T> a, Var<T> b) {
  return ag::add(a, b);
}
template <std::floating_point T>
Var<T> operator-(Var<T> a, Var<T> b) {
  return ag::sub(a, b);
}
template <std::floating_point T>
Var<T> operator*(Var<T> a, Var<T> b) {
  return ag::mul(a, b);
}

}  // namespace n2n
