// Copyright Contributors to the PointBlend Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "pointblend/scene.hpp"

namespace pointblend {

/// Near-plane cutoff in scene units; points at or behind it are flagged
/// invalid rather than dropped.
inline constexpr double kZNear = 1e-4;

/// Continuous screen coordinates and camera-space depth per point. valid[i]
/// is false iff depth <= kZNear or the floored coordinate falls outside the
/// half-open pixel grid [0,W) x [0,H); a point landing exactly on the
/// right/bottom edge is invalid.
struct ProjectedPoints {
  std::vector<double> screen_x;
  std::vector<double> screen_y;
  std::vector<double> depth;
  std::vector<std::uint8_t> valid;

  std::size_t size() const { return depth.size(); }
};

ProjectedPoints project(const PointCloud& cloud, const Camera& camera);

/// Camera for pyramid level t: canvas and intrinsics divided by 2^t, pose
/// unchanged. Throws std::invalid_argument unless W and H are divisible by
/// 2^t (use padded_camera first for arbitrary canvases).
Camera pyramid_camera(const Camera& camera, int level);

/// Smallest multiple of 2^levels that is >= extent.
int padded_extent(int extent, int levels);

/// Camera with the canvas rounded up to a multiple of 2^levels (pixels added
/// on the right/bottom only, intrinsics unchanged). Rendered outputs are
/// cropped back to the original canvas by the callers that pad.
Camera padded_camera(const Camera& camera, int levels);

}  // namespace pointblend
