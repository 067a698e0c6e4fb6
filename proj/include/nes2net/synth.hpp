// Copyright 2026 the nes2net authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic feature generation standing in for SSL front-end output. The two
// classes are isotropic Gaussians whose means sit +/- separation/2 apart
// along one fixed random unit direction; every frame of a sample draws from
// its class distribution. Each sample has its own seed stream derived from
// (seed, split, index), so datasets are deterministic and any subset can be
// regenerated independently.
#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "nes2net/model.hpp"
#include "nes2net/rng.hpp"
#include "nes2net/tensor.hpp"

namespace n2n {

struct SynthConfig {
  std::size_t feature_dim = 64;
  std::size_t frames = 50;
  std::size_t train_size = 2000;
  std::size_t dev_size = 500;
  std::size_t eval_size = 500;
  double separation = 4.0;  // distance between class means
  double cov_scale = 1.0;   // isotropic standard deviation
  std::size_t attacks = 3;  // spoof attack tags, round-robin

  void validate() const {
    auto need = [](bool ok, const char* msg) {
      if (!ok) throw std::invalid_argument(std::string("synth config: ") + msg);
    };
    need(feature_dim > 0, "feature_dim must be positive");
    need(frames > 0, "frames must be positive");
    need(separation >= 0.0, "separation must be >= 0");
    need(cov_scale >= 0.0, "cov_scale must be >= 0");
    need(attacks > 0, "attacks must be positive");
  }

  std::size_t split_size(const std::string& split) const {
    if (split == "train") return train_size;
    if (split == "dev") return dev_size;
    if (split == "eval") return eval_size;
    throw std::invalid_argument("unknown split '" + split + "'");
  }
};

struct Sample {
  std::string id;
  std::size_t label = kSpoofClass;
  std::string attack;  // "-" for bonafide
  Tensor<float> features;  // [feature_dim, frames]
};

namespace detail {

inline std::vector<double> class_direction(const SynthConfig& cfg, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "synth/direction"));
  std::vector<double> u(cfg.feature_dim);
  double norm = 0.0;
  for (auto& v : u) {
    v = rng.normal();
    norm += v * v;
  }
  norm = std::sqrt(norm);
  if (norm == 0.0) norm = 1.0;
  for (auto& v : u) v /= norm;
  return u;
}

}  // namespace detail

inline std::vector<Sample> synth_split(const SynthConfig& cfg, std::uint64_t seed,
                                       const std::string& split) {
  cfg.validate();
  std::size_t n = cfg.split_size(split);
  std::vector<double> u = detail::class_direction(cfg, seed);
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    char idbuf[64];
    std::snprintf(idbuf, sizeof(idbuf), "%s_%06zu", split.c_str(), i);
    s.id = idbuf;
    s.label = i % 2 == 0 ? kBonafideClass : kSpoofClass;
    s.attack = s.label == kBonafideClass ? "-" : "A" + std::to_string(1 + (i / 2) % cfg.attacks);
    double sign = s.label == kBonafideClass ? 0.5 : -0.5;
    Rng rng(derive_seed(seed, "synth/" + split, i));
    s.features = Tensor<float>({cfg.feature_dim, cfg.frames});
    for (std::size_t c = 0; c < cfg.feature_dim; ++c) {
      double mean = sign * cfg.separation * u[c];
      for (std::size_t t = 0; t < cfg.frames; ++t)
        s.features(c, t) = static_cast<float>(mean + cfg.cov_scale * rng.normal());
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace n2n
