// Copyright 2026 the nes2net authors
// SPDX-License-Identifier: Apache-2.0
//
// Training loop: per-epoch cosine-cycled learning rate, shuffled fixed-size
// batches (last partial batch dropped), per-sample tapes with gradient
// accumulation, dev-set EER after every epoch, checkpoint retention, and an
// optional early stop. Everything is deterministic given (model, data, seed).
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "nes2net/checkpoint.hpp"
#include "nes2net/loss.hpp"
#include "nes2net/metrics.hpp"
#include "nes2net/model.hpp"
#include "nes2net/optim.hpp"
#include "nes2net/synth.hpp"

namespace n2n {

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class LossKind { focal, weighted_ce };
enum class SelectionStrategy { best_dev, min_lr_window };

inline LossKind parse_loss(const std::string& s) {
  if (s == "focal") return LossKind::focal;
  if (s == "weighted_ce") return LossKind::weighted_ce;
  throw std::invalid_argument("unknown loss '" + s + "'");
}

inline SelectionStrategy parse_selection(const std::string& s) {
  if (s == "best_dev") return SelectionStrategy::best_dev;
  if (s == "min_lr_window") return SelectionStrategy::min_lr_window;
  throw std::invalid_argument("unknown selection strategy '" + s + "'");
}

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  OptimizerConfig optim;
  CosineCycleSchedule schedule;
  LossKind loss_kind = LossKind::focal;
  FocalLossConfig focal;
  std::vector<double> class_weights{1.0, 1.0};
  std::size_t top_k = 3;     // checkpoints kept under best_dev selection
  std::size_t patience = 0;  // early stop after this many stale epochs; 0 = off
  SelectionStrategy selection = SelectionStrategy::best_dev;

  void validate() const {
    if (batch_size == 0) throw std::invalid_argument("train config: batch_size must be >= 1");
    if (top_k == 0) throw std::invalid_argument("train config: top_k must be >= 1");
    optim.validate();
    schedule.validate();
    focal.validate();
  }
};

struct EpochLog {
  std::size_t epoch;
  double lr, train_loss, dev_eer;
};

struct TrainResult {
  std::vector<EpochLog> log;
  std::vector<std::string> kept;  // retained epoch checkpoints
  std::string best;               // best.ckpt path, empty when no epoch ran
  bool early_stopped = false;
};

// Scores one sample in eval mode.
template <std::floating_point T>
double score_sample(Model<T>& m, const Sample& s) {
  Tape<T> tape(false);
  Ctx<T> ctx(tape);
  Tensor<T> x({s.features.extent(0), s.features.extent(1)});
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = static_cast<T>(s.features[i]);
  return score_from_logits(m.forward(ctx, tape.leaf(x)).value());
}

template <std::floating_point T>
std::vector<Trial> score_samples(Model<T>& m, const std::vector<Sample>& samples) {
  std::vector<Trial> trials;
  trials.reserve(samples.size());
  for (const auto& s : samples)
    trials.push_back(
        {s.id, s.attack, s.label == kBonafideClass, score_sample(m, s)});
  return trials;
}

namespace detail {

inline std::string epoch_ckpt_name(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "epoch_%03zu.ckpt", epoch);
  return buf;
}

inline std::string g9(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

// Epochs kept by the min-LR-window strategy: within one step of any
// minimum-lr epoch of the schedule, clipped to the epochs that actually ran.
inline bool in_min_lr_window(std::size_t epoch, const CosineCycleSchedule& s) {
  std::size_t phase = epoch % s.cycle_length;
  if (phase + 2 >= s.cycle_length) return true;            // m-1, m
  return phase == 0 && epoch > 0;                          // m+1 = restart epoch
}

}  // namespace detail

inline TrainResult train_model(Model<float>& model, const std::vector<Sample>& train_set,
                               const std::vector<Sample>& dev_set, const TrainConfig& cfg,
                               const std::string& out_dir, std::uint64_t seed) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::ofstream log(fs::path(out_dir) / "log.tsv", std::ios::trunc);
  if (!log) throw std::runtime_error("train: cannot write log in " + out_dir);
  log << "epoch\tlr\ttrain_loss\tdev_eer\n" << std::flush;

  std::vector<std::pair<std::string, Tensor<float>*>> params;
  model.for_each_param(
      [&](const std::string& n, Tensor<float>& t) { params.emplace_back(n, &t); });
  std::vector<Tensor<float>> grad_acc;
  grad_acc.reserve(params.size());
  for (auto& [n, p] : params) grad_acc.emplace_back(p->shape());

  Optimizer<float> opt(cfg.optim);
  TrainResult result;
  double best_eer = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0, stale = 0;
  // (dev_eer, epoch, filename) kept under best_dev, ordered best-first.
  std::vector<std::tuple<double, std::size_t, std::string>> ranked;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = cfg.schedule.lr_at(epoch);
    opt.set_lr(lr);

    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(derive_seed(seed, "train/shuffle", epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    std::size_t batches = train_set.size() / cfg.batch_size;  // drop last partial
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t b = 0; b < batches; ++b) {
      for (auto& g : grad_acc)
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] = 0.0f;
      for (std::size_t k = 0; k < cfg.batch_size; ++k) {
        const Sample& s = train_set[order[b * cfg.batch_size + k]];
        Tape<float> tape(true);
        Ctx<float> ctx(tape);
        ctx.train = true;
        ctx.update_running = true;
        Var<float> logits = model.forward(ctx, tape.leaf(s.features));
        Var<float> loss =
            cfg.loss_kind == LossKind::focal
                ? focal_loss(ctx, logits, s.label, cfg.focal)
                : weighted_ce(ctx, logits, s.label, cfg.class_weights);
        double lv = static_cast<double>(loss.value()[0]);
        if (!std::isfinite(lv))
          throw DivergenceError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                ", sample " + s.id);
        tape.backward(loss);
        for (std::size_t p = 0; p < params.size(); ++p) {
          Tensor<float> g = ctx.grad(*params[p].second);
          for (std::size_t i = 0; i < g.numel(); ++i) grad_acc[p][i] += g[i];
        }
        epoch_loss += lv;
        ++seen;
      }
      float inv = 1.0f / static_cast<float>(cfg.batch_size);
      std::vector<std::pair<Tensor<float>*, const Tensor<float>*>> pg;
      pg.reserve(params.size());
      for (std::size_t p = 0; p < params.size(); ++p) {
        for (std::size_t i = 0; i < grad_acc[p].numel(); ++i) grad_acc[p][i] *= inv;
        pg.emplace_back(params[p].second, &grad_acc[p]);
      }
      opt.step(pg);
    }
    if (seen == 0)
      throw std::invalid_argument("train: batch_size exceeds the training set size");

    double train_loss = epoch_loss / static_cast<double>(seen);
    double dev_eer = compute_eer(score_samples(model, dev_set)).eer;
    result.log.push_back({epoch, lr, train_loss, dev_eer});
    log << epoch << '\t' << detail::g9(lr) << '\t' << detail::g9(train_loss) << '\t'
        << detail::g9(dev_eer) << '\n'
        << std::flush;

    Checkpoint ck = checkpoint_from_model(model);
    ck.set_meta("epoch", std::to_string(epoch));
    ck.set_meta("lr", detail::g9(lr));
    ck.set_meta("dev_eer", detail::g9(dev_eer));
    std::string fname = detail::epoch_ckpt_name(epoch);
    std::string fpath = (fs::path(out_dir) / fname).string();

    bool keep = true;
    if (cfg.selection == SelectionStrategy::min_lr_window)
      keep = detail::in_min_lr_window(epoch, cfg.schedule);
    if (keep) save_checkpoint(fpath, ck);
    if (cfg.selection == SelectionStrategy::best_dev && keep) {
      ranked.emplace_back(dev_eer, epoch, fpath);
      std::sort(ranked.begin(), ranked.end());  // eer, then earlier epoch
      while (ranked.size() > cfg.top_k) {
        fs::remove(std::get<2>(ranked.back()));
        ranked.pop_back();
      }
    }

    if (dev_eer < best_eer) {
      best_eer = dev_eer;
      best_epoch = epoch;
      stale = 0;
      result.best = (fs::path(out_dir) / "best.ckpt").string();
      save_checkpoint(result.best, ck);
    } else {
      ++stale;
    }
    if (cfg.patience > 0 && stale >= cfg.patience) {
      result.early_stopped = true;
      break;
    }
  }
  (void)best_epoch;

  if (cfg.selection == SelectionStrategy::best_dev) {
    for (const auto& [eer, epoch, path] : ranked) result.kept.push_back(path);
  } else {
    for (const auto& e : result.log) {
      std::string p =
          (fs::path(out_dir) / detail::epoch_ckpt_name(e.epoch)).string();
      if (fs::exists(p)) result.kept.push_back(p);
    }
  }
  return result;
}

}  // namespace n2n
