// Copyright Contributors to the PointBlend Project
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "pointblend/fitter.hpp"
#include "pointblend/parallel.hpp"

using namespace pointblend;

namespace {

Camera small_camera(int size, double focal) {
  Camera cam;
  cam.fx = cam.fy = focal;
  cam.cx = cam.cy = 0.5 * size;
  cam.width = cam.height = size;
  return cam;
}

/// Single point on the optical axis; covers exactly one pixel.
Scene single_point_scene() {
  Scene scene;
  scene.cloud.positions = {{0.014, 0.014, 1.0}};  // lands just off-center
  scene.descriptors = DescriptorSet::random_init(1, 8, 5);
  scene.label = "single";
  return scene;
}

FitDataset single_pixel_dataset(const Camera& cam) {
  // RGBA target (1,0,0,1) at the pixel the point covers, transparent elsewhere.
  FitDataset data;
  Image target(cam.width, cam.height, 4);
  const int px = static_cast<int>(std::floor(cam.fx * 0.014 + cam.cx));
  target.at(px, px, 0) = 1.0;
  target.at(px, px, 3) = 1.0;
  data.kind = TargetKind::RGBA;
  data.views.push_back({"v0", cam, std::move(target)});
  return data;
}

}  // namespace

TEST_CASE("compute_loss spec examples") {
  SUBCASE("identical prediction and target") {
    Image pred(2, 2, 4), target(2, 2, 4);
    for (double& v : pred.data()) v = 0.4;
    target.data() = pred.data();
    const LossResult r = compute_loss(pred, target, 1.0, RgbLoss::L1, nullptr);
    CHECK(r.value == 0.0);
    for (double v : r.grad.data()) CHECK(v == 0.0);
  }
  SUBCASE("red-vs-black single pixel, beta 0") {
    Image pred(1, 1, 4), target(1, 1, 4);
    pred.at(0, 0, 0) = 1.0;
    pred.at(0, 0, 3) = 1.0;
    target.at(0, 0, 3) = 1.0;
    const LossResult r = compute_loss(pred, target, 0.0, RgbLoss::L1, nullptr);
    CHECK(r.value == doctest::Approx(1.0 / 3.0));
  }
  SUBCASE("beta-weighted alpha term") {
    Image pred(1, 1, 4), target(1, 1, 4);
    pred.at(0, 0, 3) = 0.5;
    target.at(0, 0, 3) = 1.0;
    const LossResult r = compute_loss(pred, target, 10.0, RgbLoss::L1, nullptr);
    CHECK(r.value == doctest::Approx(5.0));
  }
  SUBCASE("RGB target requires a background") {
    Image pred(1, 1, 4), target(1, 1, 3);
    CHECK_THROWS_AS(compute_loss(pred, target, 1.0, RgbLoss::L1, nullptr), std::invalid_argument);
    Image bg(1, 1, 3, 0.5);
    CHECK_NOTHROW(compute_loss(pred, target, 1.0, RgbLoss::L1, &bg));
  }
  SUBCASE("size mismatch is rejected") {
    Image pred(2, 1, 4), target(1, 1, 4);
    CHECK_THROWS_AS(compute_loss(pred, target, 1.0, RgbLoss::L1, nullptr), std::invalid_argument);
  }
}

TEST_CASE("compute_loss gradient matches finite differences") {
  std::mt19937_64 rng(17);
  Image pred(3, 2, 4), target_rgba(3, 2, 4), target_rgb(3, 2, 3), bg(3, 2, 3);
  for (double& v : pred.data()) v = pbtest::unit(rng);
  for (double& v : target_rgba.data()) v = pbtest::unit(rng);
  for (double& v : target_rgb.data()) v = pbtest::unit(rng);
  for (double& v : bg.data()) v = pbtest::unit(rng);

  const double h = 1e-6;
  auto fd_check = [&](const Image& target, const Image* background, RgbLoss kind, double beta) {
    const LossResult base = compute_loss(pred, target, beta, kind, background);
    for (std::size_t i = 0; i < pred.data().size(); ++i) {
      const double saved = pred.data()[i];
      pred.data()[i] = saved + h;
      const double up = compute_loss(pred, target, beta, kind, background).value;
      pred.data()[i] = saved - h;
      const double down = compute_loss(pred, target, beta, kind, background).value;
      pred.data()[i] = saved;
      CHECK(base.grad.data()[i] == doctest::Approx((up - down) / (2.0 * h)).epsilon(1e-5));
    }
  };
  fd_check(target_rgba, nullptr, RgbLoss::L2, 1.7);
  fd_check(target_rgb, &bg, RgbLoss::L2, 0.0);
}

TEST_CASE("fit config round-trips through the key-value format") {
  FitConfig cfg;
  cfg.iterations = 123;
  cfg.learning_rate = 0.0375;
  cfg.optimizer = Optimizer::PlainGradient;
  cfg.beta = 2.5;
  cfg.loss_rgb = RgbLoss::L2;
  cfg.crop_size = 64;
  cfg.zoom_min = 0.5;
  cfg.zoom_max = 2.0;
  cfg.use_jitter = true;
  cfg.max_ray_len = 25;
  cfg.pyramid_levels = 3;
  cfg.head_mode = HeadMode::Linear;
  cfg.seed = 99;

  const FitConfig back = FitConfig::from_kv_text(cfg.to_kv());
  CHECK(back.iterations == cfg.iterations);
  CHECK(back.learning_rate == cfg.learning_rate);
  CHECK(back.optimizer == cfg.optimizer);
  CHECK(back.beta == cfg.beta);
  CHECK(back.loss_rgb == cfg.loss_rgb);
  CHECK(back.crop_size == cfg.crop_size);
  CHECK(back.zoom_min == cfg.zoom_min);
  CHECK(back.zoom_max == cfg.zoom_max);
  CHECK(back.use_jitter == cfg.use_jitter);
  CHECK(back.max_ray_len == cfg.max_ray_len);
  CHECK(back.pyramid_levels == cfg.pyramid_levels);
  CHECK(back.head_mode == cfg.head_mode);
  CHECK(back.seed == cfg.seed);

  CHECK_THROWS_AS(FitConfig::from_kv_text("unknown_key = 3"), std::invalid_argument);
  CHECK_THROWS_AS(FitConfig::from_kv_text("iterations 3"), std::invalid_argument);
  CHECK_NOTHROW(FitConfig::from_kv_text("# just a comment\n\niterations = 3 # tail\n"));
}

TEST_CASE("zero iterations leave the scene untouched") {
  const Scene scene = single_point_scene();
  const Camera cam = small_camera(8, 8.0);
  const FitDataset data = single_pixel_dataset(cam);
  FitConfig cfg;
  cfg.iterations = 0;
  cfg.pyramid_levels = 0;
  cfg.max_ray_len = 4;

  const FitResult result = fit(scene, data, cfg);
  CHECK(result.report.loss_curve.empty());
  CHECK(result.scene.descriptors.values() == scene.descriptors.values());
  CHECK_FALSE(result.report.diverged);
}

TEST_CASE("single-point scene converges to its target pixel") {
  const Scene scene = single_point_scene();
  const Camera cam = small_camera(8, 8.0);
  const FitDataset data = single_pixel_dataset(cam);

  FitConfig cfg;
  cfg.iterations = 3000;
  cfg.learning_rate = 1e-2;
  cfg.optimizer = Optimizer::AdaptiveMoment;
  cfg.loss_rgb = RgbLoss::L2;
  cfg.beta = 1.0;
  cfg.pyramid_levels = 0;
  cfg.max_ray_len = 4;
  cfg.seed = 3;

  const FitResult result = fit(scene, data, cfg);
  REQUIRE_FALSE(result.report.diverged);
  const Image rendered = render_view(result.scene, cam, result.head, 0, 4);
  const int px = static_cast<int>(std::floor(cam.fx * 0.014 + cam.cx));
  CHECK(std::abs(rendered.at(px, px, 0) - 1.0) < 0.02);
  CHECK(std::abs(rendered.at(px, px, 1) - 0.0) < 0.02);
  CHECK(std::abs(rendered.at(px, px, 2) - 0.0) < 0.02);
  CHECK(std::abs(rendered.at(px, px, 3) - 1.0) < 0.02);
}

TEST_CASE("plain-gradient descent is monotone on the convex single-point case") {
  const Scene scene = single_point_scene();
  const Camera cam = small_camera(8, 8.0);
  const FitDataset data = single_pixel_dataset(cam);

  FitConfig cfg;
  cfg.iterations = 400;
  cfg.learning_rate = 0.05;
  cfg.optimizer = Optimizer::PlainGradient;
  cfg.loss_rgb = RgbLoss::L2;
  cfg.beta = 1.0;
  cfg.pyramid_levels = 0;
  cfg.max_ray_len = 4;

  const FitResult result = fit(scene, data, cfg);
  REQUIRE_FALSE(result.report.diverged);
  for (std::size_t i = 10; i + 1 < result.report.loss_curve.size(); ++i)
    CHECK(result.report.loss_curve[i + 1] <= result.report.loss_curve[i] + 1e-12);
}

TEST_CASE("identical seeds give identical runs") {
  set_thread_count(1);
  const pbtest::TwoLayerFixture fx = pbtest::make_two_layer_fixture(32);
  Scene scene = fx.scene;
  scene.descriptors = DescriptorSet::random_init(scene.cloud.size(), 8, 11);

  FitDataset data;
  data.kind = TargetKind::RGBA;
  const HeadConfig head = HeadConfig::passthrough(8);
  for (std::size_t i = 0; i < 4; ++i) {
    const Camera& cam = fx.train_cameras[i];
    data.views.push_back({"v" + std::to_string(i), cam, render_view(fx.scene, cam, head, 1, 16)});
  }

  FitConfig cfg;
  cfg.iterations = 40;
  cfg.pyramid_levels = 1;
  cfg.max_ray_len = 16;
  cfg.crop_size = 16;
  cfg.use_jitter = true;
  cfg.seed = 77;

  const FitResult a = fit(scene, data, cfg);
  const FitResult b = fit(scene, data, cfg);
  CHECK(a.report.loss_curve == b.report.loss_curve);  // bitwise
  CHECK(a.scene.descriptors.values() == b.scene.descriptors.values());
  CHECK(a.scene.jitter_exponent == b.scene.jitter_exponent);
  set_thread_count(0);
}

TEST_CASE("loss on a crop equals the full render restricted to the window") {
  const pbtest::TwoLayerFixture fx = pbtest::make_two_layer_fixture(32);
  const Camera& cam = fx.train_cameras[0];
  const HeadConfig head = HeadConfig::passthrough(8);
  const int levels = 1, max_len = 16;

  const Image full_target = render_view(fx.scene, cam, head, levels, max_len);

  Scene scene = fx.scene;  // perturb so the loss is non-zero
  for (std::size_t i = 0; i < scene.descriptors.values().size(); i += 3)
    scene.descriptors.values()[i] += 0.05;

  StepSample sample;
  sample.zoom = 1.0;
  sample.crop_x = 8;
  sample.crop_y = 10;  // multiples of 2^levels
  const int crop = 16;

  const Camera crop_cam = step_camera(cam, sample, crop, crop);
  const Image crop_target = pull_window(full_target, sample, crop, crop);
  const Image crop_pred = render_view(scene, crop_cam, head, levels, max_len);
  const LossResult crop_loss = compute_loss(crop_pred, crop_target, 1.0, RgbLoss::L2, nullptr);

  const Image full_pred = render_view(scene, cam, head, levels, max_len);
  Image window_pred(crop, crop, 4), window_target(crop, crop, 4);
  for (int y = 0; y < crop; ++y)
    for (int x = 0; x < crop; ++x)
      for (int c = 0; c < 4; ++c) {
        window_pred.at(y, x, c) = full_pred.at(y + sample.crop_y, x + sample.crop_x, c);
        window_target.at(y, x, c) = full_target.at(y + sample.crop_y, x + sample.crop_x, c);
      }
  const LossResult full_loss = compute_loss(window_pred, window_target, 1.0, RgbLoss::L2, nullptr);

  CHECK(crop_loss.value == doctest::Approx(full_loss.value).epsilon(1e-6));
  CHECK(crop_loss.value > 0.0);
}

TEST_CASE("pull_window with zoom 1 is the exact crop restriction") {
  std::mt19937_64 rng(23);
  Image src(12, 9, 3);
  for (double& v : src.data()) v = pbtest::unit(rng);
  StepSample sample;
  sample.crop_x = 3;
  sample.crop_y = 2;
  const Image window = pull_window(src, sample, 5, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 5; ++x)
      for (int c = 0; c < 3; ++c) CHECK(window.at(y, x, c) == src.at(y + 2, x + 3, c));
}

TEST_CASE("divergence is reported, not thrown") {
  const Scene scene = single_point_scene();
  const Camera cam = small_camera(8, 8.0);
  const FitDataset data = single_pixel_dataset(cam);

  FitConfig cfg;
  cfg.iterations = 200;
  cfg.learning_rate = 1e12;  // absurd on purpose
  cfg.optimizer = Optimizer::PlainGradient;
  cfg.loss_rgb = RgbLoss::L2;
  cfg.pyramid_levels = 0;
  cfg.max_ray_len = 4;

  const FitResult result = fit(scene, data, cfg);
  CHECK(result.report.diverged);
  CHECK(result.report.diverged_iteration >= 0);
  CHECK(result.report.loss_curve.size() ==
        static_cast<std::size_t>(result.report.diverged_iteration) + 1);
}

TEST_CASE("jitter with RGB targets is rejected") {
  const Scene scene = single_point_scene();
  const Camera cam = small_camera(8, 8.0);
  FitDataset data;
  data.kind = TargetKind::RGB;
  data.views.push_back({"v0", cam, Image(8, 8, 3)});
  Image bg(8, 8, 3, 1.0);

  FitConfig cfg;
  cfg.iterations = 1;
  cfg.pyramid_levels = 0;
  cfg.max_ray_len = 4;
  cfg.use_jitter = true;
  CHECK_THROWS_AS(fit(scene, data, cfg, &bg), std::invalid_argument);
  CHECK_THROWS_AS(fit(scene, data, cfg, nullptr), std::invalid_argument);  // RGB needs background
}

TEST_CASE("pair fitting with overlay reconstructs two single-point scenes") {
  const Camera cam = small_camera(16, 16.0);
  const HeadConfig head = HeadConfig::passthrough(8);

  auto make_scene = [&](double x, double r, double g, double b, double raw_alpha) {
    Scene s;
    s.cloud.positions = {{x, 0.0, 1.0}};
    s.descriptors = DescriptorSet(1, 8);
    s.descriptors.row(0)[0] = r;
    s.descriptors.row(0)[1] = g;
    s.descriptors.row(0)[2] = b;
    s.descriptors.row(0)[7] = raw_alpha;
    return s;
  };
  const Scene gt_a = make_scene(-0.3, 0.8, 0.2, 0.1, 2.0);
  const Scene gt_b = make_scene(0.3, 0.1, 0.7, 0.9, 0.6);

  FitDataset data_a, data_b;
  data_a.kind = data_b.kind = TargetKind::RGBA;
  data_a.views.push_back({"a0", cam, render_view(gt_a, cam, head, 0, 8)});
  data_b.views.push_back({"b0", cam, render_view(gt_b, cam, head, 0, 8)});

  Scene init_a = gt_a, init_b = gt_b;
  init_a.descriptors = DescriptorSet::random_init(1, 8, 31);
  init_b.descriptors = DescriptorSet::random_init(1, 8, 32);

  FitConfig cfg;
  cfg.iterations = 2500;
  cfg.learning_rate = 1e-2;
  cfg.loss_rgb = RgbLoss::L2;
  cfg.beta = 1.0;
  cfg.pyramid_levels = 0;
  cfg.max_ray_len = 8;
  cfg.use_overlay = true;
  cfg.seed = 4;

  const PairFitResult result = fit_pair_with_overlay(init_a, init_b, data_a, data_b, cfg);
  REQUIRE_FALSE(result.report.diverged);
  CHECK(result.report.loss_curve.back() < 1e-3);

  SUBCASE("identical seeds give identical pair runs") {
    const PairFitResult again = fit_pair_with_overlay(init_a, init_b, data_a, data_b, cfg);
    CHECK(again.report.loss_curve == result.report.loss_curve);
  }
}

TEST_CASE("pair fitting with an invisible back scene degenerates to the front") {
  const Camera cam = small_camera(8, 8.0);

  Scene front;
  front.cloud.positions = {{0.0, 0.0, 1.0}};
  front.descriptors = DescriptorSet::random_init(1, 8, 41);
  Scene back;  // never projects
  back.cloud.positions = {{0.0, 0.0, -5.0}};
  back.descriptors = DescriptorSet::random_init(1, 8, 42);

  FitDataset data_f, data_b;
  data_f.kind = data_b.kind = TargetKind::RGBA;
  Image target(8, 8, 4);
  target.at(4, 4, 0) = 0.5;
  target.at(4, 4, 3) = 0.8;
  data_f.views.push_back({"f0", cam, target});
  data_b.views.push_back({"b0", cam, Image(8, 8, 4)});  // all transparent

  FitConfig cfg;
  cfg.iterations = 800;
  cfg.loss_rgb = RgbLoss::L2;
  cfg.pyramid_levels = 0;
  cfg.max_ray_len = 4;
  cfg.use_overlay = true;

  const PairFitResult result = fit_pair_with_overlay(front, back, data_f, data_b, cfg);
  REQUIRE_FALSE(result.report.diverged);
  CHECK(result.report.loss_curve.back() < result.report.loss_curve.front());
  // The invisible scene receives no gradient and keeps its initialization.
  CHECK(result.scene_b.descriptors.values() == back.descriptors.values());

  cfg.use_overlay = false;
  CHECK_THROWS_AS(fit_pair_with_overlay(front, back, data_f, data_b, cfg), std::invalid_argument);
}

TEST_CASE("evaluate_view reports perfect reconstruction as 99 dB") {
  const pbtest::TwoLayerFixture fx = pbtest::make_two_layer_fixture(32);
  const HeadConfig head = HeadConfig::passthrough(8);
  const Camera& cam = fx.train_cameras[0];
  FitDataset::View view{"v", cam, render_view(fx.scene, cam, head, 1, 16)};
  const ViewMetrics m = evaluate_view(fx.scene, head, view, TargetKind::RGBA, nullptr, 1, 16);
  CHECK(m.psnr == doctest::Approx(99.0));
  CHECK(m.l1 == doctest::Approx(0.0));
}
