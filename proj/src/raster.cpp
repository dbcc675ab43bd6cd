// Copyright Contributors to the PointBlend Project
// SPDX-License-Identifier: Apache-2.0

#include "pointblend/raster.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include "pointblend/parallel.hpp"

namespace pointblend {

namespace {

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

}  // namespace

RayBuffer group_rays(const ProjectedPoints& proj, int width, int height, int max_len,
                     RasterTimings* timings) {
  if (max_len < 1) throw std::invalid_argument("maximum ray length must be >= 1");
  if (width < 1 || height < 1) throw std::invalid_argument("ray buffer canvas must be at least 1x1");

  auto t0 = std::chrono::steady_clock::now();
  const std::size_t n = proj.size();
  const std::size_t pixels = static_cast<std::size_t>(width) * height;

  // Counting sort over pixel ids: histogram, prefix offsets, then a stable
  // scatter in input order so depth ties keep the original index order.
  std::vector<std::int32_t> counts(pixels + 1, 0);
  std::vector<std::int32_t> pixel_of(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    if (!proj.valid[i]) continue;
    const int px = static_cast<int>(std::floor(proj.screen_x[i]));
    const int py = static_cast<int>(std::floor(proj.screen_y[i]));
    const std::int32_t pid = static_cast<std::int32_t>(py) * width + px;
    pixel_of[i] = pid;
    ++counts[static_cast<std::size_t>(pid) + 1];
  }
  std::vector<std::int32_t> offsets(pixels + 1, 0);
  for (std::size_t p = 0; p < pixels; ++p) offsets[p + 1] = offsets[p] + counts[p + 1];
  const std::int32_t total_valid = offsets[pixels];

  std::vector<std::int32_t> bucketed(static_cast<std::size_t>(total_valid));
  {
    std::vector<std::int32_t> cursor(offsets.begin(), offsets.end() - 1);
    for (std::size_t i = 0; i < n; ++i) {
      const std::int32_t pid = pixel_of[i];
      if (pid < 0) continue;
      bucketed[static_cast<std::size_t>(cursor[pid]++)] = static_cast<std::int32_t>(i);
    }
  }
  if (timings) timings->group_ms += elapsed_ms(t0);

  t0 = std::chrono::steady_clock::now();
  RayBuffer out;
  out.width = width;
  out.height = height;
  out.max_len = max_len;
  out.lengths.assign(pixels, 0);
  out.indices.assign(pixels * static_cast<std::size_t>(max_len), RayBuffer::kSentinel);

  const double* depth = proj.depth.data();
  parallel_for(0, static_cast<std::int64_t>(pixels), 4096, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t p = lo; p < hi; ++p) {
      const std::int32_t begin = offsets[static_cast<std::size_t>(p)];
      const std::int32_t end = offsets[static_cast<std::size_t>(p) + 1];
      if (begin == end) continue;
      std::int32_t* bucket = bucketed.data() + begin;
      const std::int32_t count = end - begin;
      std::sort(bucket, bucket + count, [depth](std::int32_t a, std::int32_t b) {
        const double da = depth[a], db = depth[b];
        return da < db || (da == db && a < b);
      });
      const std::int32_t keep = std::min(count, static_cast<std::int32_t>(max_len));
      out.lengths[static_cast<std::size_t>(p)] = keep;
      std::copy(bucket, bucket + keep,
                out.indices.data() + static_cast<std::size_t>(p) * max_len);
    }
  });
  if (timings) timings->sort_ms += elapsed_ms(t0);
  return out;
}

}  // namespace pointblend
