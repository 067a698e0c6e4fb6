// Copyright 2026 the nes2net authors
// SPDX-License-Identifier: Apache-2.0
//
// Instrumented multiply-accumulate counting. Only the weight-applying kernels
// (matmul, conv1d, weighted_stack_sum) report MACs; elementwise math, biases,
// normalizations and softmax never do, which keeps the instrumented numbers on
// the same convention as the analytic cost formulas.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace n2n {

class MacCounter {
 public:
  void add(std::uint64_t n) {
    total_ += n;
    if (!scopes_.empty()) per_scope_[scopes_.back()] += n;
  }

  std::uint64_t total() const { return total_; }
  const std::map<std::string, std::uint64_t>& per_scope() const { return per_scope_; }

  void push_scope(std::string name) { scopes_.push_back(std::move(name)); }
  void pop_scope() { scopes_.pop_back(); }

 private:
  std::uint64_t total_ = 0;
  std::map<std::string, std::uint64_t> per_scope_;
  std::vector<std::string> scopes_;
};

namespace detail {
inline MacCounter*& active_counter() {
  thread_local MacCounter* c = nullptr;
  return c;
}
}  // namespace detail

inline void count_macs_now(std::uint64_t n) {
  if (auto* c = detail::active_counter()) c->add(n);
}

// Installs a counter for the current thread for the guard's lifetime.
class MacCounterGuard {
 public:
  explicit MacCounterGuard(MacCounter& c) : prev_(detail::active_counter()) {
    detail::active_counter() = &c;
  }
  ~MacCounterGuard() { detail::active_counter() = prev_; }
  MacCounterGuard(const MacCounterGuard&) = delete;
  MacCounterGuard& operator=(const MacCounterGuard&) = delete;

 private:
  MacCounter* prev_;
};

// Attributes counted MACs to a named layer while alive. No-op without an
// installed counter.
class MacScope {
 public:
  explicit MacScope(const std::string& name) : counter_(detail::active_counter()) {
    if (counter_) counter_->push_scope(name);
  }
  ~MacScope() {
    if (counter_) counter_->pop_scope();
  }
  MacScope(const MacScope&) = delete;
  MacScope& operator=(const MacScope&) = delete;

 private:
  MacCounter* counter_;
};

}  // namespace n2n
