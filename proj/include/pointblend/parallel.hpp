// Copyright Contributors to the PointBlend Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>

namespace pointblend {

// Global worker count for parallel_for. 0 restores hardware concurrency.
void set_thread_count(int n);
int thread_count();

// Runs body(chunk_begin, chunk_end) over a static partition of [begin, end).
// Falls back to a single inline call when the range is below min_grain or
// only one worker is configured. Chunks are contiguous and ordered, so
// callers that reduce per-chunk results in chunk order stay deterministic
// for a fixed thread count.
void parallel_for(std::int64_t begin, std::int64_t end, std::int64_t min_grain,
                  const std::function<void(std::int64_t, std::int64_t)>& body);

}  // namespace pointblend
