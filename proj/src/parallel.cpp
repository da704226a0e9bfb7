// Copyright 2026 The U-Attention Authors
// SPDX-License-Identifier: Apache-2.0

#include "uattn/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace uattn {

namespace {

int read_env_workers() {
  const char* env = std::getenv("U_ATTN_THREADS");
  if (env == nullptr) return 1;
  const int n = std::atoi(env);
  return n <= 0 ? 1 : n;
}

std::atomic<int>& workers() {
  static std::atomic<int> n{read_env_workers()};
  return n;
}

}  // namespace

int worker_count() { return workers().load(); }

void set_worker_count(int n) { workers().store(std::max(1, n)); }

void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& body) {
  const auto w = static_cast<std::int64_t>(std::min<std::int64_t>(worker_count(), n));
  if (w <= 1) {
    for (std::int64_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::int64_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(w));
  for (std::int64_t t = 0; t < w; ++t) {
    pool.emplace_back([&] {
      for (std::int64_t i = next++; i < n; i = next++) body(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace uattn
