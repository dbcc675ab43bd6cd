// Copyright Contributors to the PointBlend Project
// SPDX-License-Identifier: Apache-2.0

#include "pointblend/projection.hpp"

#include <cmath>
#include <stdexcept>

#include "pointblend/parallel.hpp"

namespace pointblend {

ProjectedPoints project(const PointCloud& cloud, const Camera& camera) {
  camera.validate();
  const std::size_t n = cloud.size();
  ProjectedPoints out;
  out.screen_x.assign(n, 0.0);
  out.screen_y.assign(n, 0.0);
  out.depth.assign(n, 0.0);
  out.valid.assign(n, 0);

  const Eigen::Matrix3d r = camera.rotation;
  const Eigen::Vector3d t = camera.translation;
  const double fx = camera.fx, fy = camera.fy, cx = camera.cx, cy = camera.cy;
  const int w = camera.width, h = camera.height;

  parallel_for(0, static_cast<std::int64_t>(n), 4096, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t i = lo; i < hi; ++i) {
      const Eigen::Vector3d pc = r * cloud.positions[static_cast<std::size_t>(i)] + t;
      out.depth[i] = pc.z();
      if (!(pc.z() > kZNear)) continue;
      const double sx = fx * (pc.x() / pc.z()) + cx;
      const double sy = fy * (pc.y() / pc.z()) + cy;
      out.screen_x[i] = sx;
      out.screen_y[i] = sy;
      const double px = std::floor(sx);
      const double py = std::floor(sy);
      if (px < 0.0 || px >= static_cast<double>(w) || py < 0.0 || py >= static_cast<double>(h))
        continue;
      out.valid[i] = 1;
    }
  });
  return out;
}

Camera pyramid_camera(const Camera& camera, int level) {
  if (level < 0) throw std::invalid_argument("pyramid level must be >= 0");
  if (level == 0) return camera;
  const std::int64_t scale = std::int64_t{1} << level;
  if (camera.width % scale != 0 || camera.height % scale != 0)
    throw std::invalid_argument("canvas is not divisible by 2^level; pad the camera first");
  Camera out = camera;
  const double s = static_cast<double>(scale);
  out.fx /= s;
  out.fy /= s;
  out.cx /= s;
  out.cy /= s;
  out.width = static_cast<int>(camera.width / scale);
  out.height = static_cast<int>(camera.height / scale);
  return out;
}

int padded_extent(int extent, int levels) {
  const int unit = 1 << levels;
  return (extent + unit - 1) / unit * unit;
}

Camera padded_camera(const Camera& camera, int levels) {
  Camera out = camera;
  out.width = padded_extent(camera.width, levels);
  out.height = padded_extent(camera.height, levels);
  return out;
}

}  // namespace pointblend
