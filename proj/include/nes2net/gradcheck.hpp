// Copyright 2026 the nes2net authors
// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference gradient verification. Meant to run in double
// precision: with eps around 1e-5 the truncation and roundoff floors are both
// far below the 1e-5 acceptance threshold.
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "nes2net/tensor.hpp"
#include "nes2net/threading.hpp"

namespace n2n {

// One independent evaluation context: parameter storage plus a pure loss
// function of it. Replicas let finite differences run on several threads
// without sharing mutable state; `keepalive` owns whatever `params` point at.
template <std::floating_point T>
struct GradCheckReplica {
  std::vector<Tensor<T>*> params;
  std::function<double()> eval;
  std::shared_ptr<void> keepalive;
};

struct GradCheckReport {
  struct Row {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t argmax = 0;  // flat component index of the worst error
  };
  std::vector<Row> per_param;
  double max_rel_err = 0.0;
  std::string worst_param;
};

// Compares analytic gradients against (f(x+eps) - f(x-eps)) / (2 eps) for
// every component of every parameter. Error metric per component:
// |analytic - fd| / max(1, |analytic|).
template <std::floating_point T>
GradCheckReport grad_check(const std::vector<std::string>& names,
                           const std::vector<Tensor<T>>& analytic,
                           const std::function<GradCheckReplica<T>()>& make_replica,
                           T eps = T(1e-5)) {
  if (names.size() != analytic.size())
    throw std::invalid_argument("grad_check: names/analytic size mismatch");
  std::vector<std::size_t> offsets(names.size() + 1, 0);
  for (std::size_t p = 0; p < names.size(); ++p)
    offsets[p + 1] = offsets[p] + analytic[p].numel();
  std::size_t total = offsets.back();
  std::vector<double> fd(total, 0.0);

  unsigned workers = max_threads();
  if (workers > total && total > 0) workers = static_cast<unsigned>(total);
  if (workers == 0) workers = 1;
  auto run = [&](GradCheckReplica<T>& rep, std::size_t stride, std::size_t first) {
    for (std::size_t p = 0; p < names.size(); ++p) {
      Tensor<T>& pt = *rep.params[p];
      if (pt.numel() != analytic[p].numel())
        throw std::invalid_argument("grad_check: replica parameter size mismatch for " +
                                    names[p]);
      for (std::size_t i = 0; i < pt.numel(); ++i) {
        std::size_t flat = offsets[p] + i;
        if (flat % stride != first) continue;
        T saved = pt[i];
        pt[i] = saved + eps;
        double up = rep.eval();
        pt[i] = saved - eps;
        double down = rep.eval();
        pt[i] = saved;
        fd[flat] = (up - down) / (2.0 * static_cast<double>(eps));
      }
    }
  };
  if (workers <= 1) {
    GradCheckReplica<T> rep = make_replica();
    run(rep, 1, 0);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        GradCheckReplica<T> rep = make_replica();
        run(rep, workers, w);
      });
    for (auto& t : pool) t.join();
  }

  GradCheckReport report;
  for (std::size_t p = 0; p < names.size(); ++p) {
    GradCheckReport::Row row;
    row.name = names[p];
    for (std::size_t i = 0; i < analytic[p].numel(); ++i) {
      double a = static_cast<double>(analytic[p][i]);
      double err = std::fabs(a - fd[offsets[p] + i]) / std::max(1.0, std::fabs(a));
      if (err > row.max_rel_err) {
        row.max_rel_err = err;
        row.argmax = i;
      }
    }
    if (row.max_rel_err > report.max_rel_err) {
      report.max_rel_err = row.max_rel_err;
      report.worst_param = row.name;
    }
    report.per_param.push_back(std::move(row));
  }
  return report;
}

}  // namespace n2n
