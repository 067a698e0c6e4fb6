// Copyright 2026 the nes2net authors
// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <vector>

#include "fd_util.hpp"
#include "nes2net/gradcheck.hpp"
#include "nes2net/macs.hpp"
#include "nes2net/tape.hpp"

using fdtest::random_tensor;
using n2n::Rng;
using n2n::Shape;
using n2n::Tape;
using n2n::Tensor;
using n2n::Var;
namespace ag = n2n::ag;

namespace {

// Reference matmul: independent loop order (per-output dot products).
Tensor<double> matmul_ref(const Tensor<double>& a, const Tensor<double>& b) {
  std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  Tensor<double> out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += a(i, p) * b(p, j);
      out(i, j) = acc;
    }
  return out;
}

// Reference conv: per-output dot product with explicit zero padding.
Tensor<double> conv1d_ref(const Tensor<double>& x, const Tensor<double>& w, std::size_t pad,
                          std::size_t dil) {
  std::size_t cin = x.extent(0), tin = x.extent(1);
  std::size_t cout = w.extent(0), k = w.extent(2);
  std::size_t tout = tin + 2 * pad - dil * (k - 1);
  Tensor<double> out({cout, tout});
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t t = 0; t < tout; ++t) {
      double acc = 0;
      for (std::size_t c = 0; c < cin; ++c)
        for (std::size_t q = 0; q < k; ++q) {
          std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + q * dil) -
                               static_cast<std::ptrdiff_t>(pad);
          if (src >= 0 && src < static_cast<std::ptrdiff_t>(tin))
            acc += w(o, c, q) * x(c, static_cast<std::size_t>(src));
        }
      out(o, t) = acc;
    }
  return out;
}

}  // namespace

TEST_CASE("matmul matches the triple-loop reference") {
  Rng rng(11);
  for (int trial = 0; trial < 25; ++trial) {
    std::size_t m = 1 + rng.below(5), k = 1 + rng.below(5), n = 1 + rng.below(5);
    Tensor<double> a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng);
    Tape<double> tape(false);
    Var<double> y = ag::matmul(tape.leaf(a), tape.leaf(b));
    Tensor<double> ref = matmul_ref(a, b);
    for (std::size_t i = 0; i < ref.numel(); ++i)
      REQUIRE(std::fabs(y.value()[i] - ref[i]) < 1e-12);
  }
}

TEST_CASE("matmul backward on basis rows reproduces matrix entries exactly") {
  Rng rng(13);
  Tensor<double> a = random_tensor({4, 3}, rng);
  Tensor<double> x = random_tensor({3, 1}, rng);
  for (std::size_t i = 0; i < 4; ++i) {
    Tape<double> tape;
    Var<double> xv = tape.leaf(x, true);
    Var<double> y = ag::matmul(tape.leaf(a), xv);
    tape.backward(ag::pick(y, i));
    Tensor<double> g = tape.grad(xv);
    for (std::size_t p = 0; p < 3; ++p) REQUIRE(g[p] == a(i, p));
  }
}

TEST_CASE("conv1d matches the direct zero-padded reference") {
  Rng rng(17);
  for (int trial = 0; trial < 40; ++trial) {
    std::size_t cin = 1 + rng.below(3), cout = 1 + rng.below(3), k = 1 + rng.below(3);
    std::size_t dil = 1 + rng.below(2), pad = rng.below(3), tin = 4 + rng.below(6);
    if (tin + 2 * pad < dil * (k - 1) + 1) continue;
    Tensor<double> x = random_tensor({cin, tin}, rng);
    Tensor<double> w = random_tensor({cout, cin, k}, rng);
    Tape<double> tape(false);
    Var<double> y = ag::conv1d(tape.leaf(x), tape.leaf(w), pad, dil);
    Tensor<double> ref = conv1d_ref(x, w, pad, dil);
    REQUIRE(y.value().shape() == ref.shape());
    for (std::size_t i = 0; i < ref.numel(); ++i)
      REQUIRE(std::fabs(y.value()[i] - ref[i]) < 1e-12);
  }
}

TEST_CASE("conv1d output length is T + 2*pad - dil*(k-1)") {
  Rng rng(19);
  struct Case {
    std::size_t k, pad, dil, tin;
  } cases[] = {{3, 1, 1, 10}, {1, 0, 1, 5}, {1, 2, 1, 5}, {3, 0, 1, 7}, {3, 2, 2, 9}, {5, 2, 1, 8}};
  for (auto c : cases) {
    Tensor<double> x = random_tensor({2, c.tin}, rng);
    Tensor<double> w = random_tensor({3, 2, c.k}, rng);
    Tape<double> tape(false);
    Var<double> y = ag::conv1d(tape.leaf(x), tape.leaf(w), c.pad, c.dil);
    REQUIRE(y.value().extent(1) == c.tin + 2 * c.pad - c.dil * (c.k - 1));
  }
}

TEST_CASE("reductions match two-pass references and keep the axis") {
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    std::size_t r = 2 + rng.below(4), c = 2 + rng.below(4);
    Tensor<double> x = random_tensor({r, c}, rng);
    for (std::size_t axis = 0; axis < 2; ++axis) {
      Tape<double> tape(false);
      Var<double> xv = tape.leaf(x);
      Tensor<double> sum = ag::reduce_sum(xv, axis).value();
      Tensor<double> mean = ag::reduce_mean(xv, axis).value();
      Tensor<double> var = ag::reduce_var(xv, axis).value();
      Shape expect = x.shape();
      expect[axis] = 1;
      REQUIRE(sum.shape() == expect);
      std::size_t n = x.extent(axis);
      std::size_t lanes = x.numel() / n;
      for (std::size_t lane = 0; lane < lanes; ++lane) {
        // walk the lane explicitly
        std::size_t i0 = axis == 0 ? lane : lane * c;
        std::size_t stride = axis == 0 ? c : 1;
        double s = 0;
        for (std::size_t i = 0; i < n; ++i) s += x[i0 + i * stride];
        double m = s / static_cast<double>(n);
        double v = 0;
        for (std::size_t i = 0; i < n; ++i) {
          double d = x[i0 + i * stride] - m;
          v += d * d;
        }
        v /= static_cast<double>(n);  // population variance
        REQUIRE(std::fabs(sum[lane] - s) < 1e-12);
        REQUIRE(std::fabs(mean[lane] - m) < 1e-12);
        REQUIRE(std::fabs(var[lane] - v) < 1e-12);
      }
    }
  }
}

TEST_CASE("softmax normalizes, matches the shifted reference, and survives huge inputs") {
  Rng rng(29);
  for (int trial = 0; trial < 20; ++trial) {
    std::size_t r = 1 + rng.below(3), c = 2 + rng.below(5);
    Tensor<double> x = random_tensor({r, c}, rng, -3.0, 3.0);
    if (trial % 4 == 0)
      for (std::size_t i = 0; i < x.numel(); ++i) x[i] += 1e4;  // stability probe
    Tape<double> tape(false);
    Tensor<double> y = ag::softmax(tape.leaf(x), 1).value();
    for (std::size_t i = 0; i < r; ++i) {
      double mx = x(i, 0);
      for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x(i, j));
      double z = 0;
      for (std::size_t j = 0; j < c; ++j) z += std::exp(x(i, j) - mx);
      double rowsum = 0;
      for (std::size_t j = 0; j < c; ++j) {
        double ref = std::exp(x(i, j) - mx) / z;
        REQUIRE(std::fabs(y(i, j) - ref) < 1e-12);
        rowsum += y(i, j);
      }
      REQUIRE(std::fabs(rowsum - 1.0) < 1e-12);
      REQUIRE(y.all_finite());
    }
  }
}

TEST_CASE("split_channels slices rows and concat_channels inverts it") {
  Rng rng(31);
  Tensor<double> x = random_tensor({6, 4}, rng);
  Tape<double> tape(false);
  Var<double> xv = tape.leaf(x);
  auto parts = ag::split_channels(xv, 3);
  REQUIRE(parts.size() == 3);
  for (std::size_t p = 0; p < 3; ++p) {
    REQUIRE(parts[p].value().shape() == Shape{2, 4});
    for (std::size_t i = 0; i < 8; ++i) REQUIRE(parts[p].value()[i] == x[p * 8 + i]);
  }
  Tensor<double> back = ag::concat_channels(parts).value();
  for (std::size_t i = 0; i < x.numel(); ++i) REQUIRE(back[i] == x[i]);
  REQUIRE_THROWS_AS(ag::split_channels(xv, 4), std::invalid_argument);
}

TEST_CASE("weighted_stack_sum with unit weights equals plain addition") {
  Rng rng(37);
  Tensor<double> a = random_tensor({3, 5}, rng), b = random_tensor({3, 5}, rng);
  Tape<double> tape(false);
  Var<double> av = tape.leaf(a), bv = tape.leaf(b);
  Var<double> w = tape.leaf(Tensor<double>::full({2}, 1.0));
  Tensor<double> fused = ag::weighted_stack_sum<double>({av, bv}, w).value();
  Tensor<double> added = ag::add(av, bv).value();
  for (std::size_t i = 0; i < added.numel(); ++i)
    REQUIRE(std::fabs(fused[i] - added[i]) < 1e-15);
}

TEST_CASE("every differentiable op agrees with central finite differences") {
  struct OpCase {
    const char* name;
    std::function<double(Rng&)> run;  // returns max rel err for one seed
  };

  auto elementwise_pair = [](Rng& rng, bool bcast) {
    std::size_t r = 2 + rng.below(3), c = 2 + rng.below(3);
    Tensor<double> a = random_tensor({r, c}, rng);
    Tensor<double> b = bcast ? random_tensor({r, 1}, rng) : random_tensor({r, c}, rng);
    return std::make_pair(a, b);
  };

  std::vector<OpCase> cases;
  cases.push_back({"add", [&](Rng& rng) {
                     auto [a, b] = elementwise_pair(rng, rng.below(2) == 0);
                     return fdtest::fd_max_rel_err(
                         {a, b},
                         [](Tape<double>&, std::vector<Var<double>>& v) {
                           return ag::add(v[0], v[1]);
                         },
                         rng.next_u64());
                   }});
  cases.push_back({"sub", [&](Rng& rng) {
                     auto [a, b] = elementwise_pair(rng, rng.below(2) == 0);
                     return fdtest::fd_max_rel_err(
                         {a, b},
                         [](Tape<double>&, std::vector<Var<double>>& v) {
                           return ag::sub(v[0], v[1]);
                         },
                         rng.next_u64());
                   }});
  cases.push_back({"mul", [&](Rng& rng) {
                     auto [a, b] = elementwise_pair(rng, rng.below(2) == 0);
                     return fdtest::fd_max_rel_err(
                         {a, b},
                         [](Tape<double>&, std::vector<Var<double>>& v) {
                           return ag::mul(v[0], v[1]);
                         },
                         rng.next_u64());
                   }});
  cases.push_back({"div", [&](Rng& rng) {
                     auto [a, b] = elementwise_pair(rng, rng.below(2) == 0);
                     for (std::size_t i = 0; i < b.numel(); ++i)
                       b[i] = (b[i] < 0 ? -1.0 : 1.0) * (0.5 + std::fabs(b[i]));
                     return fdtest::fd_max_rel_err(
                         {a, b},
                         [](Tape<double>&, std::vector<Var<double>>& v) {
                           return ag::div(v[0], v[1]);
                         },
                         rng.next_u64());
                   }});
  cases.push_back({"scale+add_const", [&](Rng& rng) {
                     Tensor<double> a = random_tensor({3, 3}, rng);
                     return fdtest::fd_max_rel_err(
                         {a},
                         [](Tape<double>&, std::vector<Var<double>>& v) {
                           return ag::add_const(ag::scale(v[0], 1.7), 0.3);
                         },
                         rng.next_u64());
                   }});
  cases.push_back({"relu", [&](Rng& rng) {
                     Tensor<double> a = random_tensor({3, 4}, rng);
                     for (std::size_t i = 0; i < a.numel(); ++i)
                       if (std::fabs(a[i]) < 0.1) a[i] += a[i] < 0 ? -0.2 : 0.2;
                     return fdtest::fd_max_rel_err(
                         {a},
                         [](Tape<double>&, std::vector<Var<double>>& v) { return ag::relu(v[0]); },
                         rng.next_u64());
                   }});
  cases.push_back({"sigmoid", [&](Rng& rng) {
                     Tensor<double> a = random_tensor({3, 4}, rng, -4.0, 4.0);
                     return fdtest::fd_max_rel_err(
                         {a},
                         [](Tape<double>&, std::vector<Var<double>>& v) {
                           return ag::sigmoid(v[0]);
                         },
                         rng.next_u64());
                   }});
  cases.push_back({"tanh", [&](Rng& rng) {
                     Tensor<double> a = random_tensor({3, 4}, rng, -3.0, 3.0);
                     return fdtest::fd_max_rel_err(
                         {a},
                         [](Tape<double>&, std::vector<Var<double>>& v) { return ag::tanh(v[0]); },
                         rng.next_u64());
                   }});
  cases.push_back({"exp", [&](Rng& rng) {
                     Tensor<double> a = random_tensor({3, 4}, rng, -2.0, 2.0);
                     return fdtest::fd_max_rel_err(
                         {a},
                         [](Tape<double>&, std::vector<Var<double>>& v) { return ag::exp(v[0]); },
                         rng.next_u64());
                   }});
  cases.push_back({"log", [&](Rng& rng) {
                     Tensor<double> a = random_tensor({3, 4}, rng, 0.3, 2.5);
                     return fdtest::fd_max_rel_err(
                         {a},
                         [](Tape<double>&, std::vector<Var<double>>& v) { return ag::log(v[0]); },
                         rng.next_u64());
                   }});
  cases.push_back({"sqrt", [&](Rng& rng) {
                     Tensor<double> a = random_tensor({3, 4}, rng, 0.3, 2.5);
                     return fdtest::fd_max_rel_err(
                         {a},
                         [](Tape<double>&, std::vector<Var<double>>& v) { return ag::sqrt(v[0]); },
                         rng.next_u64());
                   }});
  cases.push_back({"pow_const", [&](Rng& rng) {
                     Tensor<double> a = random_tensor({3, 4}, rng, 0.2, 1.5);
                     return fdtest::fd_max_rel_err(
                         {a},
                         [](Tape<double>&, std::vector<Var<double>>& v) {
                           return ag::pow_const(v[0], 1.7);
                         },
                         rng.next_u64());
                   }});
  cases.push_back({"reshape", [&](Rng& rng) {
                     Tensor<double> a = random_tensor({3, 4}, rng);
                     return fdtest::fd_max_rel_err(
                         {a},
                         [](Tape<double>&, std::vector<Var<double>>& v) {
                           return ag::reshape(v[0], {2, 6});
                         },
                         rng.next_u64());
                   }});
  cases.push_back({"matmul", [&](Rng& rng) {
                     std::size_t m = 2 + rng.below(3), k = 2 + rng.below(3),
                                 n = 2 + rng.below(3);
                     Tensor<double> a = random_tensor({m, k}, rng);
                     Tensor<double> b = random_tensor({k, n}, rng);
                     return fdtest::fd_max_rel_err(
                         {a, b},
                         [](Tape<double>&, std::vector<Var<double>>& v) {
                           return ag::matmul(v[0], v[1]);
                         },
                         rng.next_u64());
                   }});
  cases.push_back({"conv1d", [&](Rng& rng) {
                     std::size_t pad = rng.below(3), dil = 1 + rng.below(2);
                     Tensor<double> x = random_tensor({2, 6}, rng);
                     Tensor<double> w = random_tensor({2, 2, 3}, rng);
                     return fdtest::fd_max_rel_err(
                         {x, w},
                         [pad, dil](Tape<double>&, std::vector<Var<double>>& v) {
                           return ag::conv1d(v[0], v[1], pad, dil);
                         },
                         rng.next_u64());
                   }});
  cases.push_back({"split+concat", [&](Rng& rng) {
                     Tensor<double> x = random_tensor({4, 3}, rng);
                     return fdtest::fd_max_rel_err(
                         {x},
                         [](Tape<double>&, std::vector<Var<double>>& v) {
                           auto parts = ag::split_channels(v[0], 2);
                           std::swap(parts[0], parts[1]);
                           return ag::concat_channels(parts);
                         },
                         rng.next_u64());
                   }});
  cases.push_back({"reduce_sum", [&](Rng& rng) {
                     Tensor<double> x = random_tensor({3, 4}, rng);
                     std::size_t axis = rng.below(2);
                     return fdtest::fd_max_rel_err(
                         {x},
                         [axis](Tape<double>&, std::vector<Var<double>>& v) {
                           return ag::reduce_sum(v[0], axis);
                         },
                         rng.next_u64());
                   }});
  cases.push_back({"reduce_mean", [&](Rng& rng) {
                     Tensor<double> x = random_tensor({3, 4}, rng);
                     std::size_t axis = rng.below(2);
                     return fdtest::fd_max_rel_err(
                         {x},
                         [axis](Tape<double>&, std::vector<Var<double>>& v) {
                           return ag::reduce_mean(v[0], axis);
                         },
                         rng.next_u64());
                   }});
  cases.push_back({"reduce_var", [&](Rng& rng) {
                     Tensor<double> x = random_tensor({3, 4}, rng);
                     std::size_t axis = rng.below(2);
                     return fdtest::fd_max_rel_err(
                         {x},
                         [axis](Tape<double>&, std::vector<Var<double>>& v) {
                           return ag::reduce_var(v[0], axis);
                         },
                         rng.next_u64());
                   }});
  cases.push_back({"softmax", [&](Rng& rng) {
                     Tensor<double> x = random_tensor({2, 5}, rng, -2.0, 2.0);
                     std::size_t axis = rng.below(2);
                     return fdtest::fd_max_rel_err(
                         {x},
                         [axis](Tape<double>&, std::vector<Var<double>>& v) {
                           return ag::softmax(v[0], axis);
                         },
                         rng.next_u64());
                   }});
  cases.push_back({"pick", [&](Rng& rng) {
                     Tensor<double> x = random_tensor({3, 3}, rng);
                     std::size_t idx = rng.below(9);
                     return fdtest::fd_max_rel_err(
                         {x},
                         [idx](Tape<double>&, std::vector<Var<double>>& v) {
                           return ag::pick(v[0], idx);
                         },
                         rng.next_u64());
                   }});
  cases.push_back({"weighted_stack_sum", [&](Rng& rng) {
                     Tensor<double> a = random_tensor({2, 4}, rng);
                     Tensor<double> b = random_tensor({2, 4}, rng);
                     Tensor<double> w = random_tensor({2}, rng);
                     return fdtest::fd_max_rel_err(
                         {a, b, w},
                         [](Tape<double>&, std::vector<Var<double>>& v) {
                           return ag::weighted_stack_sum<double>({v[0], v[1]}, v[2]);
                         },
                         rng.next_u64());
                   }});

  for (const auto& c : cases) {
    Rng rng(n2n::derive_seed(2026, c.name));
    double worst = 0.0;
    for (int seed = 0; seed < 100; ++seed) worst = std::max(worst, c.run(rng));
    INFO(c.name);
    REQUIRE(worst < 1e-5);
  }
}

TEST_CASE("backward is single-shot until the tape is re-recorded") {
  Tape<double> tape;
  Var<double> x = tape.leaf(Tensor<double>::scalar(2.0), true);
  Var<double> y = ag::mul(x, x);
  tape.backward(y);
  REQUIRE(tape.grad(x)[0] == 4.0);
  REQUIRE_THROWS_AS(tape.backward(y), std::runtime_error);

  std::size_t base = 1;  // keep the leaf, drop the recorded op
  tape.truncate(base);
  Var<double> y2 = ag::mul(x, x);
  tape.backward(y2);  // re-armed after truncation
  REQUIRE(tape.grad(x)[0] == 4.0);
}

TEST_CASE("backward requires a scalar and a grad-enabled tape") {
  Tape<double> tape;
  Var<double> x = tape.leaf(Tensor<double>({2, 2}), true);
  Var<double> y = ag::relu(x);
  REQUIRE_THROWS_AS(tape.backward(y), std::runtime_error);

  Tape<double> frozen(false);
  Var<double> z = frozen.leaf(Tensor<double>::scalar(1.0), true);
  REQUIRE_THROWS_AS(frozen.backward(z), std::runtime_error);
}

TEST_CASE("unused leaves report zero gradients") {
  Tape<double> tape;
  Var<double> x = tape.leaf(Tensor<double>::scalar(3.0), true);
  Var<double> unused = tape.leaf(Tensor<double>({2, 3}), true);
  tape.backward(ag::mul(x, x));
  Tensor<double> g = tape.grad(unused);
  REQUIRE(g.shape() == Shape{2, 3});
  for (std::size_t i = 0; i < g.numel(); ++i) REQUIRE(g[i] == 0.0);
}

TEST_CASE("domain violations raise errors instead of producing NaN") {
  Tape<double> tape(false);
  Var<double> neg = tape.leaf(Tensor<double>::scalar(-1.0));
  Var<double> zero = tape.leaf(Tensor<double>::scalar(0.0));
  REQUIRE_THROWS_AS(ag::log(neg), std::domain_error);
  REQUIRE_THROWS_AS(ag::log(zero), std::domain_error);
  REQUIRE_THROWS_AS(ag::sqrt(neg), std::domain_error);
  REQUIRE_THROWS_AS(ag::pow_const(neg, 0.5), std::domain_error);
}

TEST_CASE("forward evaluation is bitwise deterministic") {
  auto run = [] {
    Rng rng(99);
    Tensor<double> x = random_tensor({8, 16}, rng);
    Tensor<double> w = random_tensor({8, 8, 3}, rng);
    Tape<double> tape(false);
    Var<double> y = ag::conv1d(tape.leaf(x), tape.leaf(w), 1, 1);
    y = ag::softmax(ag::relu(y), 1);
    return y.value();
  };
  Tensor<double> a = run(), b = run();
  REQUIRE(a.numel() == b.numel());
  for (std::size_t i = 0; i < a.numel(); ++i) REQUIRE(a[i] == b[i]);
}

TEST_CASE("grad_check passes correct gradients and flags corrupted ones") {
  Rng rng(55);
  Tensor<double> x0 = random_tensor({5}, rng);
  auto make_replica = [&]() {
    auto store = std::make_shared<Tensor<double>>(x0);
    n2n::GradCheckReplica<double> rep;
    rep.params = {store.get()};
    rep.eval = [store] {
      double s = 0;
      for (std::size_t i = 0; i < store->numel(); ++i) s += (*store)[i] * (*store)[i];
      return s;
    };
    rep.keepalive = store;
    return rep;
  };
  Tensor<double> good({5});
  for (std::size_t i = 0; i < 5; ++i) good[i] = 2.0 * x0[i];
  auto report = n2n::grad_check<double>({"x"}, {good}, make_replica, 1e-5);
  REQUIRE(report.max_rel_err < 1e-9);

  Tensor<double> bad = good;
  bad[3] += 0.05;
  auto report2 = n2n::grad_check<double>({"x"}, {bad}, make_replica, 1e-5);
  REQUIRE(report2.max_rel_err > 1e-3);
  REQUIRE(report2.worst_param == "x");
  REQUIRE(report2.per_param[0].argmax == 3);
}

TEST_CASE("only weight-applying kernels report MACs") {
  n2n::MacCounter counter;
  {
    n2n::MacCounterGuard guard(counter);
    Rng rng(3);
    Tape<double> tape(false);
    Var<double> a = tape.leaf(random_tensor({3, 4}, rng));
    Var<double> b = tape.leaf(random_tensor({4, 5}, rng));
    {
      n2n::MacScope scope("mm");
      ag::matmul(a, b);  // 3*4*5 = 60
    }
    Var<double> x = tape.leaf(random_tensor({2, 8}, rng));
    Var<double> w = tape.leaf(random_tensor({3, 2, 3}, rng));
    {
      n2n::MacScope scope("conv");
      ag::conv1d(x, w, 1, 1);  // 3*2*3*8 = 144, padded taps included
    }
    Var<double> s1 = tape.leaf(random_tensor({2, 3}, rng));
    Var<double> s2 = tape.leaf(random_tensor({2, 3}, rng));
    Var<double> fw = tape.leaf(random_tensor({2}, rng));
    {
      n2n::MacScope scope("fuse");
      ag::weighted_stack_sum<double>({s1, s2}, fw);  // 2*6 = 12
    }
    // None of these may count.
    ag::softmax(ag::relu(ag::add(s1, s2)), 1);
    ag::reduce_var(x, 1);
  }
  REQUIRE(counter.total() == 60 + 144 + 12);
  REQUIRE(counter.per_scope().at("mm") == 60);
  REQUIRE(counter.per_scope().at("conv") == 144);
  REQUIRE(counter.per_scope().at("fuse") == 12);
}
