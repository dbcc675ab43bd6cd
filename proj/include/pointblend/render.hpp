// Copyright Contributors to the PointBlend Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "pointblend/compositor.hpp"

namespace pointblend {

/// Default maximum ray length; CLI-overridable.
inline constexpr int kDefaultMaxRayLen = 50;
/// Default pyramid depth (levels 0..T).
inline constexpr int kDefaultPyramidLevels = 4;

/// Forward rasterization state for one view: per-level cameras, retained ray
/// buffers, and the blended raw images. The ray buffers are what the
/// backward pass replays.
struct PyramidRender {
  std::vector<Camera> cameras;
  std::vector<RayBuffer> rays;
  std::vector<RawImage> levels;
  CompositeOptions options;

  int level_count() const { return static_cast<int>(levels.size()); }
};

/// Projects, groups and composites the scene at pyramid levels 0..levels.
/// The base canvas must be divisible by 2^levels (see padded_camera). Empty
/// rays yield the null descriptor.
PyramidRender rasterize_pyramid(const Scene& scene, const Camera& camera, int levels, int max_len,
                                const CompositeOptions& options = {},
                                RasterTimings* timings = nullptr);

}  // namespace pointblend
