// Copyright 2026 the nes2net authors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic randomness. Every stream in the project is derived from one
// master seed: sub-seeds come from splitmix64 applied to the master seed mixed
// with an FNV-1a hash of a purpose tag, so adding parameters or reordering
// call sites never perturbs unrelated streams.
#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace n2n {

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Derive the seed of a named sub-stream. `salt` distinguishes indexed streams
// sharing one tag (per-sample, per-epoch, ...).
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                                 std::uint64_t salt = 0) {
  std::uint64_t s = master ^ fnv1a64(tag);
  std::uint64_t a = splitmix64(s);
  s ^= salt + 0x9e3779b97f4a7c15ull;
  std::uint64_t b = splitmix64(s);
  return a ^ (b + 0x6a09e667f3bcc909ull);
}

// splitmix64-driven generator with uniform and normal draws. Self-contained so
// results are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Marsaglia polar method; caches the second deviate.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
  }

  std::size_t below(std::size_t n) { return static_cast<std::size_t>(next_u64() % n); }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace n2n
