// Copyright Contributors to the PointBlend Project
// SPDX-License-Identifier: Apache-2.0

#include "pointblend/bench.hpp"

#include <algorithm>
#include <random>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "pointblend/render.hpp"

namespace pointblend {

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

BenchResult run_bench(const BenchConfig& config) {
  Camera camera;
  camera.width = padded_extent(config.width, config.levels);
  camera.height = padded_extent(config.height, config.levels);
  camera.fx = camera.fy = 0.8 * config.width;
  camera.cx = 0.5 * config.width;
  camera.cy = 0.5 * config.height;

  std::mt19937_64 rng(config.seed);
  auto u = [&rng] { return uniform_unit(rng()); };

  Scene scene;
  scene.cloud.positions.resize(static_cast<std::size_t>(config.points));
  for (auto& p : scene.cloud.positions) {
    const double z = 1.0 + 3.0 * u();
    const double half_w = z * config.width / (2.0 * camera.fx);
    const double half_h = z * config.height / (2.0 * camera.fy);
    p = {(2.0 * u() - 1.0) * half_w, (2.0 * u() - 1.0) * half_h, z};
  }
  scene.descriptors = DescriptorSet(scene.cloud.size(), DescriptorSet::kDefaultDim);
  for (std::size_t i = 0; i < scene.descriptors.count(); ++i) {
    double* row = scene.descriptors.row(i);
    for (int c = 0; c < scene.descriptors.dim() - 1; ++c) row[c] = u();
    row[scene.descriptors.dim() - 1] = 2.0 * u() - 0.5;  // mix of dead and live alphas
  }

  std::vector<double> project, group, sort, blend, total;
  for (int r = 0; r < std::max(1, config.repeats); ++r) {
    RasterTimings t;
    rasterize_pyramid(scene, camera, config.levels, config.max_ray_len, {}, &t);
    project.push_back(t.project_ms);
    group.push_back(t.group_ms);
    sort.push_back(t.sort_ms);
    blend.push_back(t.blend_ms);
    total.push_back(t.total_ms());
  }

  BenchResult result;
  result.config = config;
  result.median.project_ms = median(project);
  result.median.group_ms = median(group);
  result.median.sort_ms = median(sort);
  result.median.blend_ms = median(blend);
  result.median_total_ms = median(total);
  return result;
}

std::string BenchResult::to_json() const {
  nlohmann::json j;
  j["points"] = config.points;
  j["canvas"] = {config.width, config.height};
  j["max_ray_len"] = config.max_ray_len;
  j["levels"] = config.levels;
  j["repeats"] = config.repeats;
  j["phases_ms"] = {{"project", median.project_ms},
                    {"group", median.group_ms},
                    {"sort", median.sort_ms},
                    {"blend", median.blend_ms}};
  j["total_ms"] = median_total_ms;
  return j.dump();
}

std::string BenchResult::to_text() const {
  std::ostringstream out;
  out << "points " << config.points << ", canvas " << config.width << "x" << config.height
      << ", L " << config.max_ray_len << ", levels " << config.levels << ", repeats "
      << config.repeats << "\n";
  out << "  project " << median.project_ms << " ms\n";
  out << "  group   " << median.group_ms << " ms\n";
  out << "  sort    " << median.sort_ms << " ms\n";
  out << "  blend   " << median.blend_ms << " ms\n";
  out << "  total   " << median_total_ms << " ms (median)\n";
  return out.str();
}

}  // namespace pointblend
