// Copyright Contributors to the PointBlend Project
// SPDX-License-Identifier: Apache-2.0

#include "pointblend/render.hpp"

#include <chrono>
#include <stdexcept>

namespace pointblend {

PyramidRender rasterize_pyramid(const Scene& scene, const Camera& camera, int levels, int max_len,
                                const CompositeOptions& options, RasterTimings* timings) {
  if (levels < 0) throw std::invalid_argument("pyramid level count must be >= 0");
  scene.validate();
  if ((camera.width % (1 << levels)) != 0 || (camera.height % (1 << levels)) != 0)
    throw std::invalid_argument("canvas is not divisible by 2^levels; pad the camera first");

  CompositeOptions opts = options;
  opts.mu = scene.jitter_exponent;  // the exponent is scene-wise by definition

  PyramidRender render;
  render.options = opts;
  render.cameras.reserve(static_cast<std::size_t>(levels) + 1);
  render.rays.reserve(static_cast<std::size_t>(levels) + 1);
  render.levels.reserve(static_cast<std::size_t>(levels) + 1);

  for (int t = 0; t <= levels; ++t) {
    const Camera cam = pyramid_camera(camera, t);
    const auto t0 = std::chrono::steady_clock::now();
    const ProjectedPoints proj = project(scene.cloud, cam);
    if (timings)
      timings->project_ms +=
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    RayBuffer rays = group_rays(proj, cam.width, cam.height, max_len, timings);
    RawImage raw = composite_rays(rays, scene.descriptors, opts, timings);
    render.cameras.push_back(cam);
    render.rays.push_back(std::move(rays));
    render.levels.push_back(std::move(raw));
  }
  return render;
}

}  // namespace pointblend
