// Copyright Contributors to the PointBlend Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "pointblend/projection.hpp"

namespace pointblend {

/// Wall-clock per rasterization phase, in milliseconds. Accumulated across
/// pyramid levels when one pyramid is timed.
struct RasterTimings {
  double project_ms = 0.0;
  double group_ms = 0.0;
  double sort_ms = 0.0;
  double blend_ms = 0.0;

  double total_ms() const { return project_ms + group_ms + sort_ms + blend_ms; }
};

/// Per-pixel depth-sorted buckets of at most max_len point indices. Entries
/// 0..length-1 of a ray are point indices sorted by non-decreasing depth
/// (ties broken by original point index); the rest are kSentinel.
struct RayBuffer {
  static constexpr std::int32_t kSentinel = -1;

  int width = 0;
  int height = 0;
  int max_len = 0;
  std::vector<std::int32_t> indices;  // height * width * max_len
  std::vector<std::int32_t> lengths;  // height * width

  std::int32_t length_at(int y, int x) const { return lengths[static_cast<std::size_t>(y) * width + x]; }
  const std::int32_t* ray(int y, int x) const {
    return indices.data() + (static_cast<std::size_t>(y) * width + x) * max_len;
  }
  std::size_t ray_count() const { return static_cast<std::size_t>(width) * height; }
};

/// Groups valid projected points into per-pixel buckets via counting sort
/// (histogram + scatter), depth-sorts each bucket, and truncates to the
/// nearest max_len points. Throws std::invalid_argument for max_len < 1 or a
/// degenerate canvas.
RayBuffer group_rays(const ProjectedPoints& proj, int width, int height, int max_len,
                     RasterTimings* timings = nullptr);

}  // namespace pointblend
