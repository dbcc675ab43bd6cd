// Copyright Contributors to the PointBlend Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

#include "pointblend/render.hpp"

namespace pointblend {

struct BenchConfig {
  std::int64_t points = 400000;
  int width = 512;
  int height = 512;
  int max_ray_len = kDefaultMaxRayLen;
  int levels = 0;
  int repeats = 5;
  std::uint64_t seed = 7;
};

struct BenchResult {
  BenchConfig config;
  RasterTimings median;  // per-phase medians across repeats
  double median_total_ms = 0.0;

  std::string to_json() const;
  std::string to_text() const;
};

/// Rasterizes a synthetic in-frustum cloud `repeats` times and reports the
/// per-phase medians.
BenchResult run_bench(const BenchConfig& config);

}  // namespace pointblend
