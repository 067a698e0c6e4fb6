// Copyright 2026 the nes2net authors
// SPDX-License-Identifier: Apache-2.0
//
// Parameter and MAC accounting. Counting convention:
//   * one MAC per weight multiply; biases, activations, normalizations and
//     softmax are free;
//   * frame-wise layers (convs, the DR linear, pooling attention) count once
//     per frame; utterance-level ones (SE excitation, embedding, classifier)
//     count once per utterance;
//   * conv MACs cover every nominal tap, padded positions included.
// The formulas here are written from layer dimensions on purpose: tests
// compare them against the enumerated parameter tensors and against the
// instrumented kernel counter, so the three routes stay independent.
#pragma once

#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "nes2net/model.hpp"
#include "nes2net/rng.hpp"

namespace n2n {

inline std::uint64_t linear_params(std::uint64_t in, std::uint64_t out, bool bias = true) {
  return in * out + (bias ? out : 0);
}
inline std::uint64_t linear_macs(std::uint64_t in, std::uint64_t out) { return in * out; }

inline std::uint64_t conv_params(std::uint64_t cin, std::uint64_t cout, std::uint64_t k,
                                 bool bias = true) {
  return cout * cin * k + (bias ? cout : 0);
}
inline std::uint64_t conv_macs(std::uint64_t cin, std::uint64_t cout, std::uint64_t k,
                               std::uint64_t tout) {
  return cout * cin * k * tout;
}

inline std::uint64_t bn_params(std::uint64_t c) { return 2 * c; }  // gamma, beta
inline std::uint64_t se_params(std::uint64_t c, std::uint64_t ratio) {
  return linear_params(c, c / ratio) + linear_params(c / ratio, c);
}
inline std::uint64_t se_macs(std::uint64_t c, std::uint64_t ratio) {
  return linear_macs(c, c / ratio) + linear_macs(c / ratio, c);
}
inline std::uint64_t pool_params(std::uint64_t c, std::uint64_t bottleneck) {
  return linear_params(c, bottleneck) + linear_params(bottleneck, 1);
}
inline std::uint64_t pool_macs(std::uint64_t c, std::uint64_t bottleneck, std::uint64_t frames) {
  return (linear_macs(c, bottleneck) + linear_macs(bottleneck, 1)) * frames;
}

template <std::floating_point T>
std::uint64_t block_params(const ScaleBlock<T>& b) {
  std::uint64_t g = b.mid / b.scale;
  std::uint64_t p = 0;
  if (b.conv_in) p += conv_params(b.width, b.mid, 1, false) + bn_params(b.mid) +
                      conv_params(b.mid, b.width, 1, false) + bn_params(b.width);
  p += (b.scale - 1) * (conv_params(g, g, b.kernel, false) + bn_params(g));
  if (b.fused) p += (b.scale - 1) * 2;  // one weight per stacked slice
  p += se_params(b.width, b.width / b.se.fc1.w.extent(0));
  return p;
}

template <std::floating_point T>
std::uint64_t block_macs(const ScaleBlock<T>& b, std::uint64_t frames) {
  std::uint64_t g = b.mid / b.scale;
  std::uint64_t m = 0;
  if (b.conv_in)
    m += conv_macs(b.width, b.mid, 1, frames) + conv_macs(b.mid, b.width, 1, frames);
  std::uint64_t per_group = conv_macs(g, g, b.kernel, frames);
  if (b.fused)  // the shared conv runs on the current and the previous slice
    m += (b.scale - 1) * (2 * per_group + 2 * g * frames);
  else
    m += (b.scale - 1) * per_group;
  m += se_macs(b.width, b.width / b.se.fc1.w.extent(0));
  return m;
}

struct CostRow {
  std::string name;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
};

struct CostReport {
  std::string model;
  std::size_t frames = 0;
  std::vector<CostRow> rows;
  std::uint64_t total_params = 0;
  std::uint64_t total_macs = 0;
  std::uint64_t buffer_scalars = 0;  // running statistics, not trainable
  double dr_params_share = -1.0;     // res2net_dr only
  double dr_macs_share = -1.0;

  const CostRow* row(const std::string& name) const {
    for (const auto& r : rows)
      if (r.name == name) return &r;
    return nullptr;
  }
  double mmacs() const { return static_cast<double>(total_macs) / 1e6; }
};

template <std::floating_point T>
CostReport profile(Model<T>& m, std::size_t frames) {
  CostReport rep;
  rep.model = variant_name(m.cfg.variant);
  rep.frames = frames;
  if (m.dr)
    rep.rows.push_back({"dr", linear_params(m.cfg.input_dim, m.cfg.reduced_dim, true),
                        linear_macs(m.cfg.input_dim, m.cfg.reduced_dim) * frames});
  for (std::size_t i = 0; i < m.blocks.size(); ++i)
    rep.rows.push_back({m.block_name(i), block_params(m.blocks[i]),
                        block_macs(m.blocks[i], frames)});
  std::size_t c = m.cfg.trunk_width();
  rep.rows.push_back({"pool", pool_params(c, m.cfg.pool_bottleneck),
                      pool_macs(c, m.cfg.pool_bottleneck, frames)});
  std::size_t head_in = 2 * c;
  if (m.emb) {
    rep.rows.push_back({"head.emb", linear_params(head_in, m.cfg.emb_dim, true),
                        linear_macs(head_in, m.cfg.emb_dim)});
    head_in = m.cfg.emb_dim;
  }
  rep.rows.push_back({"head.cls", linear_params(head_in, m.cfg.num_classes, true),
                      linear_macs(head_in, m.cfg.num_classes)});
  for (const auto& r : rep.rows) {
    rep.total_params += r.params;
    rep.total_macs += r.macs;
  }
  m.for_each_buffer([&](const std::string&, Tensor<T>& t) { rep.buffer_scalars += t.numel(); });
  if (const CostRow* dr = rep.row("dr")) {
    rep.dr_params_share = static_cast<double>(dr->params) / static_cast<double>(rep.total_params);
    rep.dr_macs_share = static_cast<double>(dr->macs) / static_cast<double>(rep.total_macs);
  }
  return rep;
}

template <std::floating_point T>
CostReport count_params(Model<T>& m) {
  CostReport rep = profile(m, 0);
  for (auto& r : rep.rows) r.macs = 0;
  rep.total_macs = 0;
  rep.frames = 0;
  return rep;
}

template <std::floating_point T>
CostReport count_macs(Model<T>& m, std::size_t frames) {
  return profile(m, frames);
}

struct VerifyResult {
  std::uint64_t max_abs_diff = 0;
  std::vector<std::pair<std::string, std::uint64_t>> per_layer;  // |analytic - instrumented|
  std::uint64_t analytic_total = 0, instrumented_total = 0;
};

// Runs an instrumented eval-mode forward on a random input and compares the
// kernel counter against the analytic table, layer by layer.
template <std::floating_point T>
VerifyResult verify_counts(Model<T>& m, std::size_t frames, std::uint64_t seed = 7) {
  CostReport analytic = profile(m, frames);
  Tensor<T> x({m.cfg.input_dim, frames});
  Rng rng(derive_seed(seed, "verify_counts"));
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = static_cast<T>(rng.uniform(-1.0, 1.0));
  MacCounter counter;
  {
    MacCounterGuard guard(counter);
    Tape<T> tape(false);
    Ctx<T> ctx(tape);
    m.forward(ctx, tape.leaf(x));
  }
  VerifyResult res;
  res.analytic_total = analytic.total_macs;
  res.instrumented_total = counter.total();
  for (const auto& r : analytic.rows) {
    auto it = counter.per_scope().find(r.name);
    std::uint64_t inst = it == counter.per_scope().end() ? 0 : it->second;
    std::uint64_t diff = r.macs > inst ? r.macs - inst : inst - r.macs;
    res.per_layer.emplace_back(r.name, diff);
    if (diff > res.max_abs_diff) res.max_abs_diff = diff;
  }
  return res;
}

inline std::string format_table(const CostReport& rep) {
  std::ostringstream os;
  os << "model " << rep.model << ", frames " << rep.frames << "\n";
  os << std::left << std::setw(14) << "layer" << std::right << std::setw(12) << "params"
     << std::setw(16) << "macs" << "\n";
  for (const auto& r : rep.rows)
    os << std::left << std::setw(14) << r.name << std::right << std::setw(12) << r.params
       << std::setw(16) << r.macs << "\n";
  os << std::left << std::setw(14) << "total" << std::right << std::setw(12) << rep.total_params
     << std::setw(16) << rep.total_macs << "\n";
  os << "buffers (running stats): " << rep.buffer_scalars << " scalars\n";
  os << std::fixed << std::setprecision(4) << "total MMACs: " << rep.mmacs() << "\n";
  if (rep.dr_params_share >= 0.0)
    os << std::setprecision(4) << "dr share: params " << rep.dr_params_share << ", macs "
       << rep.dr_macs_share << "\n";
  return os.str();
}

inline std::string format_tsv(const CostReport& rep) {
  std::ostringstream os;
  os << "layer\tparams\tmacs\n";
  for (const auto& r : rep.rows) os << r.name << "\t" << r.params << "\t" << r.macs << "\n";
  os << "total\t" << rep.total_params << "\t" << rep.total_macs << "\n";
  return os.str();
}

}  // namespace n2n
