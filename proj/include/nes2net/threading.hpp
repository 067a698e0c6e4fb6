// Copyright 2026 the nes2net authors
// SPDX-License-Identifier: Apache-2.0
//
// Worker-thread control. N2N_THREADS caps the pool (default: hardware
// concurrency). Parallel work assigns disjoint output slots per index, so
// results never depend on the thread count.
#pragma once

#include <cstdlib>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace n2n {

inline unsigned max_threads() {
  unsigned hw = std::thread::hardware_concurrency();
  if (hw == 0) hw = 1;
  if (const char* env = std::getenv("N2N_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1)
      throw std::runtime_error("N2N_THREADS must be a positive integer, got '" +
                               std::string(env) + "'");
    return static_cast<unsigned>(v);
  }
  return hw;
}

// Runs fn(i) for i in [0, n) across up to max_threads() workers. fn must only
// write state owned by index i.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  unsigned workers = max_threads();
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  if (workers > n) workers = static_cast<unsigned>(n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
  for (auto& t : pool) t.join();
}

}  // namespace n2n
