// Copyright 2026 the nes2net authors
// SPDX-License-Identifier: Apache-2.0
//
// Back-end model family over SSL-style feature maps [N, T]:
//
//   nes2net      outer split into s1 subsets; subset 1 passes through, each
//                other subset feeds a nested layer, with the previous nested
//                output added in from subset 3 onward; concat back to N.
//   nes2net_x    same trunk, but inside the nested layers each group's conv
//                is applied to both the current subset and the previous group
//                output, and the two conv outputs are fused by a learnable
//                weighted sum. With fusion weights (1,1) this reduces exactly
//                to nes2net because the convs are bias-free (linear).
//   res2net_dr   linear dimensionality-reduction N->D, then `blocks` standard
//                scale-s blocks at width D (1x1 reduce to 3D/2, grouped k
//                convs, 1x1 expand, SE, residual).
//   res2net_wodr no reduction: `blocks` scale-s blocks directly at width N,
//                without the internal 1x1 pair (group convs + SE + residual).
//
// All variants share the head: attentive statistics pooling to [2C], an
// optional embedding linear with ReLU, and a linear classifier. The score of
// an utterance is logit(bonafide) - logit(spoof).
//
// Nested layers accumulate from their second group (group 2 sees group 1's
// passthrough); baseline blocks use the original recursion where the first
// convolution sees its subset alone.
#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nes2net/layers.hpp"
#include "nes2net/macs.hpp"
#include "nes2net/tape.hpp"

namespace n2n {

enum class Variant { nes2net, nes2net_x, res2net_dr, res2net_wodr };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::nes2net: return "nes2net";
    case Variant::nes2net_x: return "nes2net_x";
    case Variant::res2net_dr: return "res2net_dr";
    case Variant::res2net_wodr: return "res2net_wodr";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "nes2net") return Variant::nes2net;
  if (s == "nes2net_x") return Variant::nes2net_x;
  if (s == "res2net_dr") return Variant::res2net_dr;
  if (s == "res2net_wodr") return Variant::res2net_wodr;
  throw std::invalid_argument("unknown model variant '" + s + "'");
}

struct ModelConfig {
  Variant variant = Variant::nes2net;
  std::size_t input_dim = 1024;     // N, feature channels
  std::size_t s1 = 8, s2 = 8;       // outer / nested split counts
  std::size_t blocks = 4;           // baseline block count (b)
  std::size_t scale = 4;            // baseline split count (s)
  std::size_t reduced_dim = 128;    // baseline DR width (D)
  std::size_t kernel = 3;           // grouped conv kernel, odd
  std::size_t se_ratio = 8;
  std::size_t pool_bottleneck = 64;  // attention bottleneck width
  std::size_t emb_dim = 64;          // 0 = classifier directly on pooled stats
  std::size_t num_classes = 2;
  bool fusion_softmax = false;  // nes2net_x: softmax-normalize fusion weights

  bool nested() const { return variant == Variant::nes2net || variant == Variant::nes2net_x; }
  std::size_t trunk_width() const {
    return variant == Variant::res2net_dr ? reduced_dim : input_dim;
  }
  // Baseline bottleneck width between the 1x1 pair.
  std::size_t dr_block_mid() const { return reduced_dim + reduced_dim / 2; }

  void validate() const {
    auto need = [](bool ok, const std::string& msg) {
      if (!ok) throw std::invalid_argument("model config: " + msg);
    };
    need(input_dim > 0, "input_dim must be positive");
    need(kernel % 2 == 1, "kernel must be odd to preserve the frame count");
    need(num_classes >= 2, "num_classes must be at least 2");
    need(pool_bottleneck > 0, "pool_bottleneck must be positive");
    if (nested()) {
      need(s1 >= 1 && input_dim % s1 == 0, "s1 must divide input_dim");
      std::size_t c = input_dim / s1;
      need(s2 >= 1 && c % s2 == 0, "s2 must divide input_dim / s1");
      need(se_ratio > 0 && c % se_ratio == 0, "se_ratio must divide input_dim / s1");
    } else {
      need(blocks >= 1, "blocks must be at least 1");
      std::size_t width = trunk_width();
      std::size_t mid = variant == Variant::res2net_dr ? dr_block_mid() : width;
      need(variant != Variant::res2net_dr || reduced_dim % 2 == 0,
           "reduced_dim must be even");
      need(scale >= 1 && mid % scale == 0, "scale must divide the block width");
      need(se_ratio > 0 && width % se_ratio == 0, "se_ratio must divide the block width");
    }
  }
};

// One split-transform-merge block, shared by every variant:
//   [1x1 conv + BN + ReLU]  (optional, width -> mid)
//   split into `scale` groups; group 1 passes through, later groups run a
//   bias-free k-conv + BN + ReLU with the previous group output accumulated
//   (or fused by learnable weights in the nes2net_x form)
//   [1x1 conv + BN]         (optional, mid -> width)
//   SE, then residual add of the block input.
template <std::floating_point T>
struct ScaleBlock {
  std::size_t width = 0, mid = 0, scale = 0, kernel = 0;
  bool accumulate_first = false;  // group 2 sees group 1 (nested form)
  bool fused = false;             // nes2net_x group fusion
  bool fusion_softmax = false;

  std::optional<Conv1d<T>> conv_in;
  std::optional<BatchNorm1d<T>> bn_in;
  std::vector<Conv1d<T>> gconv;
  std::vector<BatchNorm1d<T>> gbn;
  std::vector<Tensor<T>> fuse;  // [2] per fused group: {current, previous}
  std::optional<Conv1d<T>> conv_out;
  std::optional<BatchNorm1d<T>> bn_out;
  SEBlock<T> se;

  static ScaleBlock make(std::size_t width, std::size_t mid, std::size_t scale,
                         std::size_t kernel, std::size_t se_ratio, bool with_1x1,
                         bool accumulate_first, bool fused, bool fusion_softmax,
                         std::uint64_t master, const std::string& name) {
    ScaleBlock b;
    b.width = width;
    b.mid = mid;
    b.scale = scale;
    b.kernel = kernel;
    b.accumulate_first = accumulate_first;
    b.fused = fused;
    b.fusion_softmax = fusion_softmax;
    if (with_1x1) {
      b.conv_in = Conv1d<T>::make(width, mid, 1, 0, 1, false, master, name + ".conv_in");
      b.bn_in = BatchNorm1d<T>::make(mid);
      b.conv_out = Conv1d<T>::make(mid, width, 1, 0, 1, false, master, name + ".conv_out");
      b.bn_out = BatchNorm1d<T>::make(width);
    } else if (mid != width) {
      throw std::invalid_argument(name + ": width change requires the 1x1 pair");
    }
    std::size_t g = mid / scale;
    std::size_t pad = (kernel - 1) / 2;
    for (std::size_t j = 2; j <= scale; ++j) {
      std::string gname = name + ".group" + std::to_string(j);
      b.gconv.push_back(Conv1d<T>::make(g, g, kernel, pad, 1, false, master, gname + ".conv"));
      b.gbn.push_back(BatchNorm1d<T>::make(g));
      if (fused) {
        Tensor<T> w({2});
        init::constant(w, fusion_softmax ? T(0) : T(1));
        b.fuse.push_back(std::move(w));
      }
    }
    b.se = SEBlock<T>::make(width, se_ratio, master, name + ".se");
    return b;
  }

  Var<T> forward(Ctx<T>& ctx, Var<T> x) {
    Var<T> h = x;
    if (conv_in) h = ag::relu(bn_in->forward(ctx, conv_in->forward(ctx, h)));
    auto parts = ag::split_channels(h, scale);
    std::vector<Var<T>> z(scale);
    z[0] = parts[0];
    for (std::size_t j = 1; j < scale; ++j) {
      bool acc = j >= 2 || accumulate_first;
      Var<T> out;
      if (fused) {
        // Shared conv on each stacked slice, then the learnable weighted sum
        // of the conv outputs; BN + ReLU after the fusion.
        Var<T> c_cur = gconv[j - 1].forward(ctx, parts[j]);
        Var<T> w = ctx.param(fuse[j - 1]);
        if (fusion_softmax) w = ag::softmax(w, 0);
        if (acc) {
          Var<T> c_prev = gconv[j - 1].forward(ctx, z[j - 1]);
          out = ag::weighted_stack_sum<T>({c_cur, c_prev}, w);
        } else {
          out = ag::weighted_stack_sum<T>({c_cur}, ag::pick(w, 0));
        }
      } else {
        Var<T> in = acc ? ag::add(parts[j], z[j - 1]) : parts[j];
        out = gconv[j - 1].forward(ctx, in);
      }
      z[j] = ag::relu(gbn[j - 1].forward(ctx, out));
    }
    Var<T> y = ag::concat_channels(z);
    if (conv_out) y = bn_out->forward(ctx, conv_out->forward(ctx, y));
    y = se.forward(ctx, y);
    return ag::add(y, x);
  }

  template <class F>
  void visit(const std::string& prefix, F&& fn) {
    if (conv_in) {
      conv_in->visit(prefix + ".conv_in", fn);
      bn_in->visit(prefix + ".bn_in", fn);
    }
    for (std::size_t j = 0; j < gconv.size(); ++j) {
      std::string g = prefix + ".group" + std::to_string(j + 2);
      gconv[j].visit(g + ".conv", fn);
      gbn[j].visit(g + ".bn", fn);
      if (fused) fn(g + ".fuse.weight", fuse[j]);
    }
    if (conv_out) {
      conv_out->visit(prefix + ".conv_out", fn);
      bn_out->visit(prefix + ".bn_out", fn);
    }
    se.visit(prefix + ".se", fn);
  }
  template <class F>
  void visit_buffers(const std::string& prefix, F&& fn) {
    if (bn_in) bn_in->visit_buffers(prefix + ".bn_in", fn);
    for (std::size_t j = 0; j < gbn.size(); ++j)
      gbn[j].visit_buffers(prefix + ".group" + std::to_string(j + 2) + ".bn", fn);
    if (bn_out) bn_out->visit_buffers(prefix + ".bn_out", fn);
  }
};

template <std::floating_point T>
struct Model {
  ModelConfig cfg;
  std::optional<Linear<T>> dr;      // res2net_dr reduction, biased
  std::vector<ScaleBlock<T>> blocks;
  AttStatsPool<T> pool;
  std::optional<Linear<T>> emb;
  Linear<T> cls;

  std::string block_name(std::size_t i) const {
    return cfg.nested() ? "nested" + std::to_string(i + 2) : "block" + std::to_string(i + 1);
  }

  // Trunk output [C, T]: the outer chain for nested variants, the sequential
  // block stack for baselines (after DR when present).
  Var<T> trunk_forward(Ctx<T>& ctx, Var<T> x) {
    if (x.value().rank() != 2 || x.value().extent(0) != cfg.input_dim)
      throw std::invalid_argument("model: expected input [" + std::to_string(cfg.input_dim) +
                                  ", T], got " + shape_str(x.value().shape()));
    if (cfg.nested()) {
      auto parts = ag::split_channels(x, cfg.s1);
      std::vector<Var<T>> y(cfg.s1);
      y[0] = parts[0];
      for (std::size_t i = 1; i < cfg.s1; ++i) {
        MacScope scope(block_name(i - 1));
        Var<T> in = i == 1 ? parts[i] : ag::add(parts[i], y[i - 1]);
        y[i] = blocks[i - 1].forward(ctx, in);
      }
      return cfg.s1 == 1 ? x : ag::concat_channels(y);
    }
    Var<T> h = x;
    if (dr) {
      MacScope scope("dr");
      h = dr->forward(ctx, h);
    }
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      MacScope scope(block_name(i));
      h = blocks[i].forward(ctx, h);
    }
    return h;
  }

  // [N, T] -> logits [num_classes]
  Var<T> forward(Ctx<T>& ctx, Var<T> x) {
    Var<T> trunk = trunk_forward(ctx, x);
    Var<T> pooled;
    {
      MacScope scope("pool");
      pooled = pool.forward(ctx, trunk);
    }
    Var<T> h = pooled;
    if (emb) {
      MacScope scope("head.emb");
      h = ag::relu(emb->forward(ctx, h));
    }
    Var<T> logits;
    {
      MacScope scope("head.cls");
      logits = cls.forward(ctx, h);
    }
    logits = ag::reshape(logits, {cfg.num_classes});
    if (!logits.value().all_finite())
      throw std::runtime_error("model: non-finite activations in forward pass");
    return logits;
  }

  template <class F>
  void for_each_param(F&& fn) {
    if (dr) dr->visit("dr", fn);
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(block_name(i), fn);
    pool.visit("pool", fn);
    if (emb) emb->visit("head.emb", fn);
    cls.visit("head.cls", fn);
  }
  template <class F>
  void for_each_buffer(F&& fn) {
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit_buffers(block_name(i), fn);
  }

  std::size_t param_tensor_sum() {
    std::size_t n = 0;
    for_each_param([&](const std::string&, Tensor<T>& t) { n += t.numel(); });
    return n;
  }
};

// Class convention for two-class configs: index 0 = spoof, index 1 = bonafide.
inline constexpr std::size_t kSpoofClass = 0;
inline constexpr std::size_t kBonafideClass = 1;

template <std::floating_point T>
Model<T> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model<T> m;
  m.cfg = cfg;
  if (cfg.nested()) {
    std::size_t c = cfg.input_dim / cfg.s1;
    for (std::size_t i = 2; i <= cfg.s1; ++i)
      m.blocks.push_back(ScaleBlock<T>::make(
          c, c, cfg.s2, cfg.kernel, cfg.se_ratio, /*with_1x1=*/true,
          /*accumulate_first=*/true, /*fused=*/cfg.variant == Variant::nes2net_x,
          cfg.fusion_softmax, seed, "nested" + std::to_string(i)));
  } else {
    if (cfg.variant == Variant::res2net_dr)
      m.dr = Linear<T>::make(cfg.input_dim, cfg.reduced_dim, true, seed, "dr");
    std::size_t width = cfg.trunk_width();
    bool with_1x1 = cfg.variant == Variant::res2net_dr;
    std::size_t mid = with_1x1 ? cfg.dr_block_mid() : width;
    for (std::size_t i = 1; i <= cfg.blocks; ++i)
      m.blocks.push_back(ScaleBlock<T>::make(width, mid, cfg.scale, cfg.kernel, cfg.se_ratio,
                                             with_1x1, /*accumulate_first=*/false,
                                             /*fused=*/false, false, seed,
                                             "block" + std::to_string(i)));
  }
  std::size_t c = cfg.trunk_width();
  m.pool = AttStatsPool<T>::make(c, cfg.pool_bottleneck, seed, "pool");
  std::size_t head_in = 2 * c;
  if (cfg.emb_dim > 0) {
    m.emb = Linear<T>::make(head_in, cfg.emb_dim, true, seed, "head.emb");
    head_in = cfg.emb_dim;
  }
  m.cls = Linear<T>::make(head_in, cfg.num_classes, true, seed, "head.cls");
  return m;
}

// Two-class score: higher = more bonafide.
template <std::floating_point T>
double score_from_logits(const Tensor<T>& logits) {
  return static_cast<double>(logits[kBonafideClass]) - static_cast<double>(logits[kSpoofClass]);
}

}  // namespace n2n
