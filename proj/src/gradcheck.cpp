// Copyright Contributors to the PointBlend Project
// SPDX-License-Identifier: Apache-2.0

#include "pointblend/gradcheck.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include "pointblend/fitter.hpp"

namespace pointblend {

namespace {

// Margin around non-smooth boundaries (ReLU kink, fusion threshold, L1 sign
// changes); configurations landing inside it are re-drawn, since central
// differences are meaningless across a kink.
constexpr double kKinkMargin = 1e-3;

struct CheckConfig {
  Scene scene;
  Camera camera;
  Image target;
  Image background;
  bool use_background = false;
  double beta = 1.0;
  RgbLoss loss = RgbLoss::L2;
  HeadConfig head;
  int levels = 0;
  int max_len = 4;
  double jitter_p = 1.0;
};

/// Independent forward pass: shares only the non-differentiated projection
/// and bucketing plumbing with production; activation, blending, head fusion
/// and the loss are re-written as naive sequential loops.
double naive_loss(const CheckConfig& cfg) {
  const Scene& scene = cfg.scene;
  const DescriptorSet& desc = scene.descriptors;
  const int color_dim = desc.color_dim();
  const Camera padded = padded_camera(cfg.camera, cfg.levels);
  const double scale =
      cfg.jitter_p == 1.0 ? 1.0 : std::pow(cfg.jitter_p, scene.jitter_exponent);

  std::vector<Image> features;
  std::vector<Image> alphas;
  for (int t = 0; t <= cfg.levels; ++t) {
    const Camera cam_t = pyramid_camera(padded, t);
    const ProjectedPoints proj = project(scene.cloud, cam_t);
    const RayBuffer rays = group_rays(proj, cam_t.width, cam_t.height, cfg.max_len);
    Image feat(cam_t.width, cam_t.height, color_dim);
    Image alph(cam_t.width, cam_t.height, 1);
    for (int y = 0; y < cam_t.height; ++y)
      for (int x = 0; x < cam_t.width; ++x) {
        const std::int32_t len = rays.length_at(y, x);
        const std::int32_t* ray = rays.ray(y, x);
        double transmittance = 1.0;
        for (std::int32_t k = 0; k < len; ++k) {
          const double* row = desc.row(static_cast<std::size_t>(ray[k]));
          const double raw = row[desc.dim() - 1];
          const double a = std::tanh(raw > 0.0 ? raw : 0.0) * scale;
          for (int c = 0; c < color_dim; ++c) feat.at(y, x, c) += transmittance * a * row[c];
          transmittance *= 1.0 - a;
        }
        alph.at(y, x, 0) = 1.0 - transmittance;
      }
    features.push_back(std::move(feat));
    alphas.push_back(std::move(alph));
  }

  // Head, re-written.
  Image pred(cfg.camera.width, cfg.camera.height, 4);
  for (int y = 0; y < cfg.camera.height; ++y)
    for (int x = 0; x < cfg.camera.width; ++x) {
      if (cfg.head.mode == HeadMode::Passthrough) {
        int chosen = cfg.levels;
        for (int t = 0; t < cfg.levels; ++t) {
          if (alphas[static_cast<std::size_t>(t)].at(y >> t, x >> t, 0) > cfg.head.fusion_threshold) {
            chosen = t;
            break;
          }
        }
        for (int c = 0; c < 3; ++c)
          pred.at(y, x, c) = features[static_cast<std::size_t>(chosen)].at(y >> chosen, x >> chosen, c);
        pred.at(y, x, 3) = alphas[static_cast<std::size_t>(chosen)].at(y >> chosen, x >> chosen, 0);
      } else {
        const int m = cfg.head.input_dim;
        for (int o = 0; o < 4; ++o) {
          double v = cfg.head.bias[static_cast<std::size_t>(o)];
          for (int i = 0; i < m - 1; ++i)
            v += cfg.head.weights[static_cast<std::size_t>(i) * 4 + o] * features[0].at(y, x, i);
          v += cfg.head.weights[static_cast<std::size_t>(m - 1) * 4 + o] * alphas[0].at(y, x, 0);
          pred.at(y, x, o) = v;
        }
      }
    }

  // Loss, re-written.
  const double n = static_cast<double>(cfg.camera.width) * cfg.camera.height;
  double loss = 0.0;
  for (int y = 0; y < cfg.camera.height; ++y)
    for (int x = 0; x < cfg.camera.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        double value = pred.at(y, x, c);
        if (cfg.use_background) value += (1.0 - pred.at(y, x, 3)) * cfg.background.at(y, x, c);
        const double delta = value - cfg.target.at(y, x, c);
        loss += (cfg.loss == RgbLoss::L1 ? std::abs(delta) : delta * delta) / (3.0 * n);
      }
      if (!cfg.use_background && cfg.beta > 0.0)
        loss += cfg.beta * std::abs(pred.at(y, x, 3) - cfg.target.at(y, x, 3)) / n;
    }
  return loss;
}

Image crop_image_like(const Image& src, const Camera& cam) {
  if (src.width() == cam.width && src.height() == cam.height) return src;
  Image out(cam.width, cam.height, src.channels());
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x)
      for (int c = 0; c < src.channels(); ++c) out.at(y, x, c) = src.at(y, x, c);
  return out;
}

/// True when the unperturbed forward sits too close to a kink for finite
/// differences to be trustworthy.
bool near_kink(const CheckConfig& cfg) {
  const DescriptorSet& desc = cfg.scene.descriptors;
  for (std::size_t i = 0; i < desc.count(); ++i) {
    const double raw = desc.raw_alpha(i);
    if (std::abs(raw) < kKinkMargin) return true;
  }
  const Camera padded = padded_camera(cfg.camera, cfg.levels);
  CompositeOptions opts;
  opts.jitter_p = cfg.jitter_p;
  const PyramidRender render =
      rasterize_pyramid(cfg.scene, padded, cfg.levels, cfg.max_len, opts);
  if (cfg.head.mode == HeadMode::Passthrough) {
    for (int t = 0; t < render.level_count() - 1; ++t) {
      const Image& a = render.levels[static_cast<std::size_t>(t)].alpha;
      for (double v : a.data())
        if (std::abs(v - cfg.head.fusion_threshold) < kKinkMargin) return true;
    }
  }
  const Image pred = crop_image_like(apply_head(render, cfg.head), cfg.camera);
  for (int y = 0; y < cfg.camera.height; ++y)
    for (int x = 0; x < cfg.camera.width; ++x) {
      if (cfg.loss == RgbLoss::L1) {
        for (int c = 0; c < 3; ++c) {
          double value = pred.at(y, x, c);
          if (cfg.use_background) value += (1.0 - pred.at(y, x, 3)) * cfg.background.at(y, x, c);
          if (std::abs(value - cfg.target.at(y, x, c)) < kKinkMargin) return true;
        }
      }
      if (!cfg.use_background && cfg.beta > 0.0 &&
          std::abs(pred.at(y, x, 3) - cfg.target.at(y, x, 3)) < kKinkMargin)
        return true;
    }
  return false;
}

CheckConfig random_config(std::mt19937_64& rng, const GradCheckOptions& opts, int index) {
  auto u = [&rng] { return uniform_unit(rng()); };
  CheckConfig cfg;

  cfg.levels = static_cast<int>(u() * 3.0);  // 0..2
  const int unit = 1 << cfg.levels;
  const int min_canvas = std::max(4, unit);
  const int max_canvas = std::max(min_canvas, opts.max_canvas);
  auto canvas_extent = [&] {
    const int raw = min_canvas + static_cast<int>(u() * (max_canvas - min_canvas + 1));
    return std::min(max_canvas, (raw + unit - 1) / unit * unit);
  };
  cfg.camera.width = canvas_extent();
  cfg.camera.height = canvas_extent();
  cfg.camera.fx = cfg.camera.fy = 0.5 * cfg.camera.width / std::tan(0.5);
  cfg.camera.cx = 0.5 * cfg.camera.width;
  cfg.camera.cy = 0.5 * cfg.camera.height;

  cfg.max_len = 1 + static_cast<int>(u() * opts.max_ray_len);
  const int m = 4 + static_cast<int>(u() * 5.0);  // 4..8 channels

  const int n = 1 + static_cast<int>(u() * opts.max_points);
  cfg.scene.cloud.positions.reserve(static_cast<std::size_t>(n) + 8);
  // Every 13th config points the cloud behind the camera so the all-empty
  // case stays covered.
  const bool all_behind = index % 13 == 12;
  for (int i = 0; i < n; ++i) {
    const double z = all_behind ? -(0.5 + 2.0 * u()) : 0.5 + 2.5 * u();
    const double extent = std::abs(z) * cfg.camera.width / (2.0 * cfg.camera.fx) * 1.3;
    cfg.scene.cloud.positions.emplace_back((2.0 * u() - 1.0) * extent,
                                           (2.0 * u() - 1.0) * extent, z);
  }
  // A deliberate stack of points along one pixel ray exercises truncation.
  if (!all_behind && u() < 0.7) {
    const double bx = (2.0 * u() - 1.0) * 0.2;
    const double by = (2.0 * u() - 1.0) * 0.2;
    for (int k = 0; k < cfg.max_len + 2; ++k)
      cfg.scene.cloud.positions.emplace_back(bx, by, 1.0 + 0.1 * k);
  }

  const std::size_t count = cfg.scene.cloud.positions.size();
  cfg.scene.descriptors = DescriptorSet(count, m);
  for (std::size_t i = 0; i < count; ++i) {
    double* row = cfg.scene.descriptors.row(i);
    for (int c = 0; c < m - 1; ++c) row[c] = 2.0 * u() - 1.0;
    const double pick = u();
    if (pick < 0.2)
      row[m - 1] = -(0.01 + 1.5 * u());  // dead
    else if (pick < 0.35)
      row[m - 1] = 4.0 + 4.0 * u();  // saturated
    else
      row[m - 1] = 0.01 + 2.0 * u();
  }
  cfg.scene.jitter_exponent = 0.3 + 2.0 * u();

  if (u() < 0.5) {
    cfg.head = HeadConfig::passthrough(m);
  } else {
    cfg.head = HeadConfig::linear_identity(m);
    for (double& w : cfg.head.weights) w += 0.4 * (u() - 0.5);
    for (double& b : cfg.head.bias) b += 0.2 * (u() - 0.5);
  }
  cfg.loss = u() < 0.5 ? RgbLoss::L1 : RgbLoss::L2;
  cfg.use_background = u() < 0.4;
  cfg.beta = cfg.use_background ? 0.0 : 0.25 + 2.0 * u();
  if (u() < 0.5) cfg.jitter_p = 0.1 + 0.85 * u();

  cfg.target = Image(cfg.camera.width, cfg.camera.height, cfg.use_background ? 3 : 4);
  for (double& v : cfg.target.data()) v = u();
  if (cfg.use_background) {
    cfg.background = Image(cfg.camera.width, cfg.camera.height, 3);
    for (double& v : cfg.background.data()) v = u();
  }
  return cfg;
}

}  // namespace

GradCheckResult run_gradient_check(const GradCheckOptions& opts) {
  std::mt19937_64 rng(opts.seed);
  GradCheckResult result;
  const double h = opts.fd_step;

  for (int cidx = 0; cidx < opts.configs; ++cidx) {
    CheckConfig cfg = random_config(rng, opts, cidx);
    for (int attempt = 0; attempt < 64 && near_kink(cfg); ++attempt)
      cfg = random_config(rng, opts, cidx);

    SceneGradients analytic = compute_scene_gradients(
        cfg.scene, cfg.camera, cfg.target, cfg.use_background ? &cfg.background : nullptr,
        cfg.beta, cfg.loss, cfg.head, cfg.levels, cfg.max_len, cfg.jitter_p);
    if (opts.tamper && !analytic.descriptors.values.empty())
      analytic.descriptors.values.front() += 1e-2;

    auto record = [&](double a, double fd, const char* what, std::size_t which) {
      const double err = std::abs(a - fd) / std::max({1e-3, std::abs(a), std::abs(fd)});
      ++result.parameters_checked;
      if (err > result.max_error) {
        result.max_error = err;
        std::ostringstream note;
        note << "config " << cidx << " " << what << "[" << which << "]: analytic " << a
             << " vs fd " << fd;
        result.worst_case = note.str();
      }
    };

    // Descriptor entries.
    for (std::size_t i = 0; i < cfg.scene.descriptors.values().size(); ++i) {
      double& slot = cfg.scene.descriptors.values()[i];
      const double saved = slot;
      slot = saved + h;
      const double up = naive_loss(cfg);
      slot = saved - h;
      const double down = naive_loss(cfg);
      slot = saved;
      record(analytic.descriptors.values[i], (up - down) / (2.0 * h), "descriptor", i);
    }

    // Jitter exponent.
    {
      const double saved = cfg.scene.jitter_exponent;
      cfg.scene.jitter_exponent = saved + h;
      const double up = naive_loss(cfg);
      cfg.scene.jitter_exponent = saved - h;
      const double down = naive_loss(cfg);
      cfg.scene.jitter_exponent = saved;
      record(analytic.descriptors.mu_grad, (up - down) / (2.0 * h), "mu", 0);
    }

    // Linear-head parameters.
    if (cfg.head.mode == HeadMode::Linear) {
      for (std::size_t i = 0; i < cfg.head.weights.size(); ++i) {
        const double saved = cfg.head.weights[i];
        cfg.head.weights[i] = saved + h;
        const double up = naive_loss(cfg);
        cfg.head.weights[i] = saved - h;
        const double down = naive_loss(cfg);
        cfg.head.weights[i] = saved;
        record(analytic.head.weights[i], (up - down) / (2.0 * h), "head.weight", i);
      }
      for (std::size_t o = 0; o < 4; ++o) {
        const double saved = cfg.head.bias[o];
        cfg.head.bias[o] = saved + h;
        const double up = naive_loss(cfg);
        cfg.head.bias[o] = saved - h;
        const double down = naive_loss(cfg);
        cfg.head.bias[o] = saved;
        record(analytic.head.bias[o], (up - down) / (2.0 * h), "head.bias", o);
      }
    }
    ++result.configs_run;
  }
  return result;
}

}  // namespace pointblend
