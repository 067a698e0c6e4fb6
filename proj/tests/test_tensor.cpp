// Copyright 2026 the nes2net authors
// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "nes2net/rng.hpp"
#include "nes2net/tensor.hpp"

using n2n::Shape;
using n2n::Tensor;

TEST_CASE("tensor construction and element access") {
  Tensor<float> t({2, 3});
  REQUIRE(t.rank() == 2);
  REQUIRE(t.numel() == 6);
  for (std::size_t i = 0; i < 6; ++i) REQUIRE(t[i] == 0.0f);

  t(1, 2) = 5.0f;
  REQUIRE(t[5] == 5.0f);

  Tensor<double> s = Tensor<double>::scalar(2.5);
  REQUIRE(s.numel() == 1);
  REQUIRE(s[0] == 2.5);

  Tensor<double> f = Tensor<double>::full({4}, -1.0);
  for (std::size_t i = 0; i < 4; ++i) REQUIRE(f[i] == -1.0);

  REQUIRE_THROWS_AS(Tensor<float>({2, 2}, {1.0f, 2.0f}), std::invalid_argument);
}

TEST_CASE("tensor reshape preserves contents and rejects bad sizes") {
  Tensor<double> t({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor<double> r = t.reshaped({3, 2});
  REQUIRE(r.shape() == Shape{3, 2});
  for (std::size_t i = 0; i < 6; ++i) REQUIRE(r[i] == t[i]);
  REQUIRE_THROWS_AS(t.reshaped({4, 2}), std::invalid_argument);
}

TEST_CASE("row-major layout matches manual stride arithmetic") {
  Tensor<double> t({2, 3, 4});
  n2n::Rng rng(7);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform();
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 4; ++k) REQUIRE(t(i, j, k) == t[(i * 3 + j) * 4 + k]);
}

TEST_CASE("broadcast shape rules: equal rank, size-1 axes stretch") {
  Shape out;
  REQUIRE(n2n::broadcast_shapes({3, 4}, {3, 4}, out));
  REQUIRE(out == Shape{3, 4});
  REQUIRE(n2n::broadcast_shapes({3, 1}, {3, 4}, out));
  REQUIRE(out == Shape{3, 4});
  REQUIRE(n2n::broadcast_shapes({1, 4}, {3, 1}, out));
  REQUIRE(out == Shape{3, 4});
  REQUIRE_FALSE(n2n::broadcast_shapes({2, 4}, {3, 4}, out));
  REQUIRE_FALSE(n2n::broadcast_shapes({4}, {3, 4}, out));  // rank promotion is not allowed
}

TEST_CASE("all_finite flags NaN and infinity") {
  Tensor<double> t({3}, {1.0, 2.0, 3.0});
  REQUIRE(t.all_finite());
  t[1] = std::nan("");
  REQUIRE_FALSE(t.all_finite());
  t[1] = 2.0;
  t[2] = INFINITY;
  REQUIRE_FALSE(t.all_finite());
}

TEST_CASE("rng streams are deterministic and tag-separated") {
  n2n::Rng a(n2n::derive_seed(42, "stream"));
  n2n::Rng b(n2n::derive_seed(42, "stream"));
  n2n::Rng c(n2n::derive_seed(42, "other"));
  bool diverged = false;
  for (int i = 0; i < 64; ++i) {
    double va = a.uniform(), vb = b.uniform(), vc = c.uniform();
    REQUIRE(va == vb);
    if (va != vc) diverged = true;
    REQUIRE(va >= 0.0);
    REQUIRE(va < 1.0);
  }
  REQUIRE(diverged);
}

TEST_CASE("rng normal draws have roughly standard moments") {
  n2n::Rng rng(123);
  const int n = 20000;
  double sum = 0, sum2 = 0;
  for (int i = 0; i < n; ++i) {
    double v = rng.normal();
    sum += v;
    sum2 += v * v;
  }
  double mean = sum / n;
  double var = sum2 / n - mean * mean;
  REQUIRE(std::fabs(mean) < 0.03);
  REQUIRE(std::fabs(var - 1.0) < 0.05);
}
