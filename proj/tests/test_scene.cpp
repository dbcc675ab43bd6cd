// Copyright Contributors to the PointBlend Project
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "pointblend/scene.hpp"

using namespace pointblend;

namespace {

DescriptorSet make_set(std::initializer_list<double> values, int dim) {
  DescriptorSet set(values.size() / dim, dim);
  std::size_t i = 0;
  for (double v : values) set.values()[i++] = v;
  return set;
}

}  // namespace

TEST_CASE("interpolate_descriptors endpoints are exact") {
  std::mt19937_64 rng(1);
  DescriptorSet a(5, 4), b(5, 4);
  for (double& v : a.values()) v = 2.0 * pbtest::unit(rng) - 1.0;
  for (double& v : b.values()) v = 2.0 * pbtest::unit(rng) - 1.0;

  const DescriptorSet at0 = interpolate_descriptors(a, b, 0.0);
  const DescriptorSet at1 = interpolate_descriptors(a, b, 1.0);
  CHECK(at0.values() == a.values());
  CHECK(at1.values() == b.values());
}

TEST_CASE("interpolate_descriptors linear blend") {
  const DescriptorSet a = make_set({0.0, 0.0}, 2);
  const DescriptorSet b = make_set({2.0, 2.0}, 2);
  const DescriptorSet mid = interpolate_descriptors(a, b, 0.25);
  CHECK(mid.values()[0] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("interpolate_descriptors identity and swap properties") {
  std::mt19937_64 rng(2);
  DescriptorSet a(8, 8), b(8, 8);
  for (double& v : a.values()) v = 4.0 * pbtest::unit(rng) - 2.0;
  for (double& v : b.values()) v = 4.0 * pbtest::unit(rng) - 2.0;

  for (int trial = 0; trial < 50; ++trial) {
    const double t = pbtest::unit(rng);
    const DescriptorSet same = interpolate_descriptors(a, a, t);
    CHECK(same.values() == a.values());  // exact for all t

    const DescriptorSet fwd = interpolate_descriptors(a, b, t);
    const DescriptorSet rev = interpolate_descriptors(b, a, 1.0 - t);
    for (std::size_t i = 0; i < fwd.values().size(); ++i)
      CHECK(fwd.values()[i] == doctest::Approx(rev.values()[i]).epsilon(1e-12));
  }
}

TEST_CASE("interpolate_descriptors rejects shape mismatch") {
  DescriptorSet a(2, 4), b(3, 4), c(2, 8);
  CHECK_THROWS_AS(interpolate_descriptors(a, b, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(interpolate_descriptors(a, c, 0.5), std::invalid_argument);
}

TEST_CASE("descriptor random init is small, bounded and seeded") {
  const DescriptorSet a = DescriptorSet::random_init(100, 8, 42);
  const DescriptorSet b = DescriptorSet::random_init(100, 8, 42);
  const DescriptorSet c = DescriptorSet::random_init(100, 8, 43);
  CHECK(a.values() == b.values());
  CHECK(a.values() != c.values());
  for (double v : a.values()) {
    CHECK(v >= -DescriptorSet::kInitScale);
    CHECK(v <= DescriptorSet::kInitScale);
  }
  for (std::size_t i = 0; i < a.count(); ++i) CHECK(a.raw_alpha(i) > 0.0);  // trainable
}

TEST_CASE("point cloud invariants") {
  PointCloud empty;
  CHECK_THROWS_AS(empty.validate(), std::invalid_argument);

  PointCloud bad;
  bad.positions.push_back({0.0, 0.0, std::numeric_limits<double>::quiet_NaN()});
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  PointCloud ok;
  ok.positions.push_back({1.0, 2.0, 3.0});
  CHECK_NOTHROW(ok.validate());
}

TEST_CASE("camera invariants") {
  Camera cam;
  cam.width = 16;
  cam.height = 16;
  cam.fx = cam.fy = 10.0;
  CHECK_NOTHROW(cam.validate());

  Camera skewed = cam;
  skewed.rotation(0, 1) = 1e-3;  // beyond the 1e-6 orthonormality tolerance
  CHECK_THROWS_AS(skewed.validate(), std::invalid_argument);

  Camera degenerate = cam;
  degenerate.width = 0;
  CHECK_THROWS_AS(degenerate.validate(), std::invalid_argument);

  Camera bad_focal = cam;
  bad_focal.fx = 0.0;
  CHECK_THROWS_AS(bad_focal.validate(), std::invalid_argument);
}

TEST_CASE("scene and dataset consistency checks") {
  Scene scene;
  scene.cloud.positions = {{0, 0, 1}, {1, 0, 1}};
  scene.descriptors = DescriptorSet(3, 8);  // wrong row count
  CHECK_THROWS_AS(scene.validate(), std::invalid_argument);
  scene.descriptors = DescriptorSet(2, 8);
  CHECK_NOTHROW(scene.validate());

  FitDataset data;
  CHECK_THROWS_AS(data.validate(), std::invalid_argument);  // no views

  Camera cam;
  cam.width = 4;
  cam.height = 4;
  cam.fx = cam.fy = 4.0;
  data.kind = TargetKind::RGBA;
  data.views.push_back({"v0", cam, Image(4, 4, 4)});
  CHECK_NOTHROW(data.validate());

  data.views[0].target.at(0, 0, 3) = 1.5;  // alpha out of range
  CHECK_THROWS_AS(data.validate(), std::invalid_argument);

  data.views[0].target = Image(5, 4, 4);  // size mismatch
  CHECK_THROWS_AS(data.validate(), std::invalid_argument);

  data.views[0].target = Image(4, 4, 3);  // kind mismatch
  CHECK_THROWS_AS(data.validate(), std::invalid_argument);
}
