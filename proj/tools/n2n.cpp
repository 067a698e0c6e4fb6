// Copyright 2026 the nes2net authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: profiling, gradient checking, training, scoring,
// metric evaluation and checkpoint averaging. Exit codes: 0 success,
// 1 computational failure, 2 usage or config error.

#include <cstdio>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "nes2net/checkpoint.hpp"
#include "nes2net/config.hpp"
#include "nes2net/cost.hpp"
#include "nes2net/gradcheck.hpp"
#include "nes2net/metrics.hpp"
#include "nes2net/model.hpp"
#include "nes2net/rng.hpp"
#include "nes2net/synth.hpp"
#include "nes2net/train.hpp"

namespace {

using namespace n2n;

constexpr int kExitOk = 0;
constexpr int kExitFailure = 2;  // usage / config
constexpr int kExitCompute = 1;  // computational failure

std::string g9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

// ---- profile ----

struct ProfileArgs {
  std::string config;
  std::size_t frames = 200;
  std::string format = "table";
  bool verify = false;
  std::uint64_t seed = 1;
};

int cmd_profile(const ProfileArgs& a) {
  RunConfig cfg = load_run_config(a.config);
  auto m = build_model<float>(cfg.model, a.seed);
  CostReport report = profile(m, a.frames);
  std::cout << (a.format == "tsv" ? format_tsv(report) : format_table(report));
  if (a.verify) {
    VerifyResult v = verify_counts(m, a.frames, a.seed);
    std::cout << "verify: analytic " << v.analytic_total << " instrumented "
              << v.instrumented_total << " max_abs_diff " << v.max_abs_diff << "\n";
    if (v.max_abs_diff != 0) {
      for (const auto& [layer, diff] : v.per_layer)
        if (diff != 0.0) std::cerr << "verify mismatch: " << layer << " off by " << diff << "\n";
      return kExitCompute;
    }
  }
  return kExitOk;
}

// ---- gradcheck ----

struct GradcheckArgs {
  std::string config;
  std::uint64_t seed = 1;
  double eps = 1e-5;
  std::size_t frames = 16;
  double threshold = 1e-5;
  std::size_t max_params = 50000;
  std::string inject_fault;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  RunConfig cfg = load_run_config(a.config);
  auto proto = build_model<double>(cfg.model, a.seed);
  std::size_t n_params = proto.param_tensor_sum();
  if (n_params > a.max_params) {
    std::cerr << "gradcheck: model has " << n_params << " parameters, over the --max-params cap "
              << a.max_params << "; use a reduced config\n";
    return kExitFailure;
  }

  // A freshly built model sits exactly on relu kinks (zero biases, zero-mean
  // normalized activations), where finite differences straddle the corner.
  // Redrawing every parameter from a continuous distribution moves the check
  // to a generic point.
  {
    Rng prng(derive_seed(a.seed, "gradcheck/params"));
    proto.for_each_param([&](const std::string&, Tensor<double>& t) {
      for (std::size_t i = 0; i < t.numel(); ++i) t[i] = prng.uniform(-0.8, 0.8);
    });
  }

  Rng rng(derive_seed(a.seed, "gradcheck/input"));
  Tensor<double> x({cfg.model.input_dim, a.frames});
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
  Tensor<double> proj({cfg.model.num_classes});
  for (std::size_t i = 0; i < proj.numel(); ++i) proj[i] = rng.normal();

  // Analytic gradients of a random projection of the logits, train mode.
  Tape<double> tape(true);
  Ctx<double> ctx(tape);
  ctx.train = true;
  Var<double> xv = tape.leaf(x, true);
  Var<double> loss = ag::reduce_sum(ag::mul(proto.forward(ctx, xv), tape.leaf(proj)), 0);
  tape.backward(loss);

  std::vector<std::string> names{"input"};
  std::vector<Tensor<double>> analytic{tape.grad(xv)};
  proto.for_each_param([&](const std::string& n, Tensor<double>& t) {
    names.push_back(n);
    analytic.push_back(ctx.grad(t));
  });

  bool faulted = false;
  if (!a.inject_fault.empty()) {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i].find(a.inject_fault) != std::string::npos) {
        for (std::size_t j = 0; j < analytic[i].numel(); ++j) analytic[i][j] += 0.5;
        faulted = true;
      }
    if (!faulted) {
      std::cerr << "gradcheck: --inject-fault '" << a.inject_fault
                << "' matches no parameter\n";
      return kExitFailure;
    }
  }

  auto make_replica = [&proto, &x, &proj]() {
    struct Pack {
      Model<double> m;
      Tensor<double> x, proj;
    };
    auto pk = std::make_shared<Pack>(Pack{proto, x, proj});
    GradCheckReplica<double> rep;
    rep.keepalive = pk;
    rep.params.push_back(&pk->x);
    pk->m.for_each_param([&](const std::string&, Tensor<double>& t) { rep.params.push_back(&t); });
    rep.eval = [pk]() {
      Tape<double> t(false);
      Ctx<double> c(t);
      c.train = true;
      Var<double> out = pk->m.forward(c, t.leaf(pk->x));
      return ag::reduce_sum(ag::mul(out, t.leaf(pk->proj)), 0).value()[0];
    };
    return rep;
  };

  GradCheckReport report = grad_check<double>(names, analytic, make_replica, a.eps);
  std::vector<std::string> offenders;
  for (const auto& row : report.per_param) {
    std::cout << row.name << "\t" << g9(row.max_rel_err) << "\n";
    if (!(row.max_rel_err < a.threshold)) offenders.push_back(row.name);
  }
  std::cout << "max " << g9(report.max_rel_err) << " at " << report.worst_param << "\n";
  if (!offenders.empty()) {
    std::cerr << "gradcheck: threshold " << g9(a.threshold) << " breached by:";
    for (const auto& n : offenders) std::cerr << " " << n;
    std::cerr << "\n";
    return kExitCompute;
  }
  std::cout << "gradcheck passed (" << names.size() << " tensors, threshold "
            << g9(a.threshold) << ")\n";
  return kExitOk;
}

// ---- train ----

struct TrainArgs {
  std::string config;
  std::string out;
  std::uint64_t seed = 1;
};

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = load_run_config(a.config);
  if (!cfg.has_model || !cfg.has_train || !cfg.has_data) {
    std::string missing = !cfg.has_model ? "[model]" : !cfg.has_train ? "[train]" : "[data]";
    throw ConfigError(a.config + ": train needs " + missing);
  }
  auto m = build_model<float>(cfg.model, a.seed);
  auto train_set = synth_split(cfg.data, a.seed, "train");
  auto dev_set = synth_split(cfg.data, a.seed, "dev");
  TrainResult r = train_model(m, train_set, dev_set, cfg.train, a.out, a.seed);
  for (const auto& e : r.log)
    std::cout << "epoch " << e.epoch << " lr " << g9(e.lr) << " train_loss " << g9(e.train_loss)
              << " dev_eer " << g9(e.dev_eer) << "\n";
  if (r.early_stopped) std::cout << "early stop after " << r.log.size() << " epochs\n";
  if (!r.best.empty()) std::cout << "best " << r.best << "\n";
  for (const auto& k : r.kept) std::cout << "kept " << k << "\n";
  return kExitOk;
}

// ---- score ----

struct ScoreArgs {
  std::string config;
  std::string ckpt;
  std::string split = "eval";
  std::string out;
  std::uint64_t seed = 1;
};

int cmd_score(const ScoreArgs& a) {
  RunConfig cfg = load_run_config(a.config);
  if (!cfg.has_model || !cfg.has_data)
    throw ConfigError(a.config + ": score needs [model] and [data]");
  auto m = build_model<float>(cfg.model, a.seed);
  checkpoint_to_model(load_checkpoint(a.ckpt), m);
  auto samples = synth_split(cfg.data, a.seed, a.split);
  write_scores(a.out, score_samples(m, samples));
  std::cout << "scored " << samples.size() << " " << a.split << " trials -> " << a.out << "\n";
  return kExitOk;
}

// ---- eval ----

struct EvalArgs {
  std::string scores;
  std::string config;
  double p_tar = -1.0, c_miss = -1.0, c_fa = -1.0;  // <0: take from config/defaults
};

int cmd_eval(const EvalArgs& a) {
  EvalConfig ec;
  if (!a.config.empty()) ec = load_run_config(a.config).eval;
  if (a.p_tar > 0.0) ec.p_tar = a.p_tar;
  if (a.c_miss > 0.0) ec.c_miss = a.c_miss;
  if (a.c_fa > 0.0) ec.c_fa = a.c_fa;

  ScoreSet set = read_scores(a.scores);
  EerResult pooled = compute_eer(set);
  std::cout << "trials " << set.trials.size() << " bonafide " << set.n_bonafide() << " spoof "
            << set.n_spoof() << "\n";
  std::cout << "pooled_eer " << g9(pooled.eer) << "\n";
  std::cout << "eer_threshold " << g9(pooled.threshold) << "\n";
  for (const auto& [attack, eer] : per_attack_eer(set.trials))
    if (attack != "pooled") std::cout << "attack_eer " << attack << " " << g9(eer) << "\n";
  std::cout << "min_dcf " << g9(compute_min_dcf(set.trials, ec.p_tar, ec.c_miss, ec.c_fa))
            << "\n";
  std::cout << "cllr " << g9(compute_cllr(set.trials)) << "\n";
  return kExitOk;
}

// ---- avg ----

struct AvgArgs {
  std::vector<std::string> inputs;
  std::string out;
};

int cmd_avg(const AvgArgs& a) {
  std::vector<Checkpoint> cks;
  cks.reserve(a.inputs.size());
  for (const auto& p : a.inputs) cks.push_back(load_checkpoint(p));
  Checkpoint avg = average_checkpoints(cks);
  save_checkpoint(a.out, avg);
  std::cout << "averaged " << cks.size() << " checkpoints -> " << a.out << "\n";
  std::cout << "variant " << avg.meta("variant") << "\n";
  std::cout << "source_epochs " << avg.meta("source_epochs") << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Nes2Net back-end toolkit"};
  app.require_subcommand(1);

  ProfileArgs pa;
  auto* profile_cmd = app.add_subcommand("profile", "parameter and MAC accounting per layer");
  profile_cmd->add_option("--config", pa.config, "run config file")->required();
  profile_cmd->add_option("--frames", pa.frames, "frames per utterance")
      ->check(CLI::Range(std::size_t{1}, std::size_t{1} << 31))
      ->capture_default_str();
  profile_cmd->add_option("--format", pa.format, "output format")
      ->check(CLI::IsMember({"table", "tsv"}))
      ->capture_default_str();
  profile_cmd->add_flag("--verify", pa.verify, "cross-check against instrumented forward counts");
  profile_cmd->add_option("--seed", pa.seed, "master seed")->capture_default_str();

  GradcheckArgs ga;
  auto* gradcheck_cmd =
      app.add_subcommand("gradcheck", "finite-difference verification of all gradients");
  gradcheck_cmd->add_option("--config", ga.config, "run config file (reduced model)")->required();
  gradcheck_cmd->add_option("--seed", ga.seed, "master seed")->capture_default_str();
  gradcheck_cmd->add_option("--eps", ga.eps, "central-difference step")
      ->check(CLI::Range(1e-7, 1e-3))
      ->capture_default_str();
  gradcheck_cmd->add_option("--frames", ga.frames, "frames in the probe input")
      ->check(CLI::Range(std::size_t{1}, std::size_t{1} << 20))
      ->capture_default_str();
  gradcheck_cmd->add_option("--threshold", ga.threshold, "max relative error allowed")
      ->capture_default_str();
  gradcheck_cmd->add_option("--max-params", ga.max_params, "parameter-count cap")
      ->capture_default_str();
  gradcheck_cmd->add_option("--inject-fault", ga.inject_fault,
                            "corrupt analytic gradients of matching parameters (test hook)");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "train on synthetic data");
  train_cmd->add_option("--config", ta.config, "run config file")->required();
  train_cmd->add_option("--out", ta.out, "output directory")->required();
  train_cmd->add_option("--seed", ta.seed, "master seed")->capture_default_str();

  ScoreArgs sa;
  auto* score_cmd = app.add_subcommand("score", "score a synthetic split with a checkpoint");
  score_cmd->add_option("--config", sa.config, "run config file")->required();
  score_cmd->add_option("--ckpt", sa.ckpt, "checkpoint file")->required();
  score_cmd->add_option("--split", sa.split, "data split")
      ->check(CLI::IsMember({"train", "dev", "eval"}))
      ->capture_default_str();
  score_cmd->add_option("--out", sa.out, "score file to write")->required();
  score_cmd->add_option("--seed", sa.seed, "master seed")->capture_default_str();

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "metrics over a score file");
  eval_cmd->add_option("--scores", ea.scores, "score file")->required();
  eval_cmd->add_option("--config", ea.config, "run config file for [eval] costs");
  eval_cmd->add_option("--p-tar", ea.p_tar, "target prior");
  eval_cmd->add_option("--c-miss", ea.c_miss, "miss cost");
  eval_cmd->add_option("--c-fa", ea.c_fa, "false-alarm cost");

  AvgArgs aa;
  auto* avg_cmd = app.add_subcommand("avg", "average checkpoints");
  avg_cmd->add_option("inputs", aa.inputs, "checkpoint files")->required()->expected(-1);
  avg_cmd->add_option("--out", aa.out, "averaged checkpoint to write")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitFailure;
  }

  try {
    if (app.got_subcommand(profile_cmd)) return cmd_profile(pa);
    if (app.got_subcommand(gradcheck_cmd)) return cmd_gradcheck(ga);
    if (app.got_subcommand(train_cmd)) return cmd_train(ta);
    if (app.got_subcommand(score_cmd)) return cmd_score(sa);
    if (app.got_subcommand(eval_cmd)) return cmd_eval(ea);
    if (app.got_subcommand(avg_cmd)) return cmd_avg(aa);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitFailure;
  } catch (const DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return kExitCompute;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCompute;
  }
  return kExitFailure;
}
