// Copyright Contributors to the PointBlend Project
// SPDX-License-Identifier: Apache-2.0

#include "pointblend/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace pointblend {

namespace {

std::atomic<int> g_threads{0};

int effective_threads() {
  const int configured = g_threads.load(std::memory_order_relaxed);
  if (configured > 0) return configured;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace

void set_thread_count(int n) { g_threads.store(n < 0 ? 0 : n, std::memory_order_relaxed); }

int thread_count() { return effective_threads(); }

void parallel_for(std::int64_t begin, std::int64_t end, std::int64_t min_grain,
                  const std::function<void(std::int64_t, std::int64_t)>& body) {
  const std::int64_t count = end - begin;
  if (count <= 0) return;
  const int workers = effective_threads();
  if (workers <= 1 || count < std::max<std::int64_t>(2, min_grain)) {
    body(begin, end);
    return;
  }
  const std::int64_t chunks = std::min<std::int64_t>(workers, count);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(chunks));
  for (std::int64_t c = 0; c < chunks; ++c) {
    const std::int64_t lo = begin + count * c / chunks;
    const std::int64_t hi = begin + count * (c + 1) / chunks;
    if (lo >= hi) continue;
    pool.emplace_back([&body, lo, hi] { body(lo, hi); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace pointblend
