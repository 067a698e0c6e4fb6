// Copyright 2026 the nes2net authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: a line-oriented text format with [section] headers and
// key = value pairs. '#' starts a comment (full line or trailing). Sections:
// [model], [train], [data], [eval]. Unknown sections or keys are errors, as
// are malformed values; error messages carry the source line number.
#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "nes2net/model.hpp"
#include "nes2net/synth.hpp"
#include "nes2net/train.hpp"

namespace n2n {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EvalConfig {
  double p_tar = 0.05;
  double c_miss = 1.0;
  double c_fa = 10.0;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SynthConfig data;
  EvalConfig eval;
  bool has_model = false, has_train = false, has_data = false, has_eval = false;
};

namespace detail {

struct ConfigCursor {
  std::string name;
  std::size_t line = 0;

  [[noreturn]] void fail(const std::string& msg) const {
    throw ConfigError(name + ":" + std::to_string(line) + ": " + msg);
  }

  std::uint64_t to_count(const std::string& key, const std::string& v) const {
    try {
      std::size_t used = 0;
      long long n = std::stoll(v, &used);
      if (used != v.size() || n < 0) throw std::invalid_argument("range");
      return static_cast<std::uint64_t>(n);
    } catch (const std::exception&) {
      fail(key + " expects a non-negative integer, got '" + v + "'");
    }
  }
  double to_f64(const std::string& key, const std::string& v) const {
    try {
      std::size_t used = 0;
      double d = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument("trailing");
      return d;
    } catch (const std::exception&) {
      fail(key + " expects a number, got '" + v + "'");
    }
  }
  bool to_bool(const std::string& key, const std::string& v) const {
    if (v == "true") return true;
    if (v == "false") return false;
    fail(key + " expects 'true' or 'false', got '" + v + "'");
  }
};

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

inline void apply_model_key(ModelConfig& m, const std::string& key, const std::string& v,
                            const ConfigCursor& at) {
  if (key == "variant") {
    try {
      m.variant = parse_variant(v);
    } catch (const std::exception& e) {
      at.fail(e.what());
    }
  } else if (key == "input_dim") m.input_dim = at.to_count(key, v);
  else if (key == "s1") m.s1 = at.to_count(key, v);
  else if (key == "s2") m.s2 = at.to_count(key, v);
  else if (key == "blocks") m.blocks = at.to_count(key, v);
  else if (key == "scale") m.scale = at.to_count(key, v);
  else if (key == "reduced_dim") m.reduced_dim = at.to_count(key, v);
  else if (key == "kernel") m.kernel = at.to_count(key, v);
  else if (key == "se_ratio") m.se_ratio = at.to_count(key, v);
  else if (key == "pool_bottleneck") m.pool_bottleneck = at.to_count(key, v);
  else if (key == "emb_dim") m.emb_dim = at.to_count(key, v);
  else if (key == "num_classes") m.num_classes = at.to_count(key, v);
  else if (key == "fusion_softmax") m.fusion_softmax = at.to_bool(key, v);
  else at.fail("unknown key '" + key + "' in [model]");
}

inline void apply_train_key(TrainConfig& t, const std::string& key, const std::string& v,
                            const ConfigCursor& at) {
  try {
    if (key == "epochs") t.epochs = at.to_count(key, v);
    else if (key == "batch_size") t.batch_size = at.to_count(key, v);
    else if (key == "optimizer") t.optim.kind = parse_optimizer(v);
    else if (key == "lr_max") t.schedule.eta_max = at.to_f64(key, v);
    else if (key == "lr_min") t.schedule.eta_min = at.to_f64(key, v);
    else if (key == "cycle_length") t.schedule.cycle_length = at.to_count(key, v);
    else if (key == "weight_decay") t.optim.weight_decay = at.to_f64(key, v);
    else if (key == "loss") t.loss_kind = parse_loss(v);
    else if (key == "gamma") t.focal.gamma = at.to_f64(key, v);
    else if (key == "alpha") t.focal.alpha = at.to_f64(key, v);
    else if (key == "alpha_weighting") t.focal.alpha_weighting = at.to_bool(key, v);
    else if (key == "class_weight_spoof") t.class_weights[kSpoofClass] = at.to_f64(key, v);
    else if (key == "class_weight_bonafide") t.class_weights[kBonafideClass] = at.to_f64(key, v);
    else if (key == "top_k") t.top_k = at.to_count(key, v);
    else if (key == "patience") t.patience = at.to_count(key, v);
    else if (key == "selection") t.selection = parse_selection(v);
    else at.fail("unknown key '" + key + "' in [train]");
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    at.fail(e.what());
  }
}

inline void apply_data_key(SynthConfig& d, const std::string& key, const std::string& v,
                           const ConfigCursor& at) {
  if (key == "feature_dim") d.feature_dim = at.to_count(key, v);
  else if (key == "frames") d.frames = at.to_count(key, v);
  else if (key == "train_size") d.train_size = at.to_count(key, v);
  else if (key == "dev_size") d.dev_size = at.to_count(key, v);
  else if (key == "eval_size") d.eval_size = at.to_count(key, v);
  else if (key == "separation") d.separation = at.to_f64(key, v);
  else if (key == "cov_scale") d.cov_scale = at.to_f64(key, v);
  else if (key == "attacks") d.attacks = at.to_count(key, v);
  else at.fail("unknown key '" + key + "' in [data]");
}

inline void apply_eval_key(EvalConfig& e, const std::string& key, const std::string& v,
                           const ConfigCursor& at) {
  if (key == "p_tar") e.p_tar = at.to_f64(key, v);
  else if (key == "c_miss") e.c_miss = at.to_f64(key, v);
  else if (key == "c_fa") e.c_fa = at.to_f64(key, v);
  else at.fail("unknown key '" + key + "' in [eval]");
}

}  // namespace detail

inline RunConfig parse_run_config(std::istream& is, const std::string& name) {
  RunConfig cfg;
  detail::ConfigCursor at{name, 0};
  std::string section;
  std::string line;
  while (std::getline(is, line)) {
    ++at.line;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') at.fail("malformed section header '" + line + "'");
      section = line.substr(1, line.size() - 2);
      if (section == "model") cfg.has_model = true;
      else if (section == "train") cfg.has_train = true;
      else if (section == "data") cfg.has_data = true;
      else if (section == "eval") cfg.has_eval = true;
      else at.fail("unknown section [" + section + "]");
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) at.fail("expected 'key = value', got '" + line + "'");
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) at.fail("empty key");
    if (value.empty()) at.fail("empty value for '" + key + "'");
    if (section.empty()) at.fail("key '" + key + "' outside any section");
    if (section == "model") detail::apply_model_key(cfg.model, key, value, at);
    else if (section == "train") detail::apply_train_key(cfg.train, key, value, at);
    else if (section == "data") detail::apply_data_key(cfg.data, key, value, at);
    else detail::apply_eval_key(cfg.eval, key, value, at);
  }

  at.line = 0;
  auto check = [&](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(name + ": " + msg);
  };
  if (cfg.has_train) {
    check(cfg.train.schedule.cycle_length > 0,
          "[train] cycle_length is required (epochs per cosine cycle)");
    try {
      cfg.train.validate();
    } catch (const std::exception& e) {
      throw ConfigError(name + ": " + e.what());
    }
  }
  if (cfg.has_data) {
    try {
      cfg.data.validate();
    } catch (const std::exception& e) {
      throw ConfigError(name + ": " + e.what());
    }
  }
  check(cfg.eval.p_tar > 0.0 && cfg.eval.p_tar < 1.0, "[eval] p_tar must be in (0, 1)");
  check(cfg.eval.c_miss > 0.0 && cfg.eval.c_fa > 0.0, "[eval] costs must be positive");
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  return parse_run_config(is, path);
}

}  // namespace n2n
