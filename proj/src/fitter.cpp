// Copyright Contributors to the PointBlend Project
// SPDX-License-Identifier: Apache-2.0

#include "pointblend/fitter.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace pointblend {

namespace {

using SteadyClock = std::chrono::steady_clock;

double seconds_since(SteadyClock::time_point t0) {
  return std::chrono::duration<double>(SteadyClock::now() - t0).count();
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config key '" + key + "' expects a boolean, got '" + v + "'");
}

Image crop_image(const Image& src, int width, int height) {
  if (src.width() == width && src.height() == height) return src;
  Image out(width, height, src.channels());
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < src.channels(); ++c) out.at(y, x, c) = src.at(y, x, c);
  return out;
}

Image embed_image(const Image& src, int width, int height) {
  if (src.width() == width && src.height() == height) return src;
  Image out(width, height, src.channels());
  for (int y = 0; y < src.height(); ++y)
    for (int x = 0; x < src.width(); ++x)
      for (int c = 0; c < src.channels(); ++c) out.at(y, x, c) = src.at(y, x, c);
  return out;
}

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;

  void ensure(std::size_t n) {
    if (m.size() != n) {
      m.assign(n, 0.0);
      v.assign(n, 0.0);
      step = 0;
    }
  }
};

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

void adam_update(double* params, const double* grads, std::size_t n, AdamState& state, double lr) {
  state.ensure(n);
  ++state.step;
  const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < n; ++i) {
    state.m[i] = kAdamBeta1 * state.m[i] + (1.0 - kAdamBeta1) * grads[i];
    state.v[i] = kAdamBeta2 * state.v[i] + (1.0 - kAdamBeta2) * grads[i] * grads[i];
    params[i] -= lr * (state.m[i] / bc1) / (std::sqrt(state.v[i] / bc2) + kAdamEps);
  }
}

void sgd_update(double* params, const double* grads, std::size_t n, double lr) {
  for (std::size_t i = 0; i < n; ++i) params[i] -= lr * grads[i];
}

/// One optimizer slot per parameter group.
struct ParamUpdater {
  Optimizer kind = Optimizer::AdaptiveMoment;
  AdamState state;

  void apply(double* params, const double* grads, std::size_t n, double lr) {
    if (kind == Optimizer::AdaptiveMoment)
      adam_update(params, grads, n, state, lr);
    else
      sgd_update(params, grads, n, lr);
  }
};

/// Fixed number of RNG draws per step keeps the stream layout stable across
/// configurations that disable individual augmentations. The view index is
/// drawn first so crop offsets can use the sampled view's canvas.
StepSample draw_step(std::mt19937_64& rng, const FitConfig& cfg, const FitDataset& data,
                     int* crop_w_out, int* crop_h_out) {
  StepSample s;
  const int view_count = static_cast<int>(data.views.size());
  s.view = std::min(view_count - 1, static_cast<int>(uniform_unit(rng()) * view_count));
  const Camera& cam = data.views[static_cast<std::size_t>(s.view)].camera;
  const int crop_w = cfg.crop_size > 0 ? cfg.crop_size : cam.width;
  const int crop_h = cfg.crop_size > 0 ? cfg.crop_size : cam.height;

  const double u_zoom = uniform_unit(rng());
  const double u_cx = uniform_unit(rng());
  const double u_cy = uniform_unit(rng());
  const double u_coin = uniform_unit(rng());
  const double u_p = uniform_unit(rng());

  s.zoom = cfg.zoom_min + u_zoom * (cfg.zoom_max - cfg.zoom_min);
  const int unit = 1 << cfg.pyramid_levels;
  const int nx = (cam.width - crop_w) / unit + 1;
  const int ny = (cam.height - crop_h) / unit + 1;
  s.crop_x = std::min(cam.width - crop_w, unit * std::min(nx - 1, static_cast<int>(u_cx * nx)));
  s.crop_y = std::min(cam.height - crop_h, unit * std::min(ny - 1, static_cast<int>(u_cy * ny)));
  if (cfg.use_jitter && u_coin < 0.5) {
    s.jitter = true;
    s.p = u_p;
  }
  *crop_w_out = crop_w;
  *crop_h_out = crop_h;
  return s;
}

void scale_alpha_channel(Image& rgba, double p) {
  for (int y = 0; y < rgba.height(); ++y)
    for (int x = 0; x < rgba.width(); ++x) rgba.at(y, x, 3) *= p;
}

double psnr_from_mse(double mse) {
  if (mse <= 0.0) return 99.0;
  return std::min(99.0, -10.0 * std::log10(mse));
}

}  // namespace

void FitConfig::validate() const {
  if (iterations < 0) throw std::invalid_argument("iterations must be >= 0");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (!(beta >= 0.0)) throw std::invalid_argument("beta must be >= 0");
  if (!(zoom_min > 0.0) || !(zoom_max > 0.0) || zoom_min > zoom_max)
    throw std::invalid_argument("zoom range must satisfy 0 < zoom_min <= zoom_max");
  if (crop_size < 0) throw std::invalid_argument("crop_size must be >= 0");
  if (max_ray_len < 1) throw std::invalid_argument("max_ray_len must be >= 1");
  if (pyramid_levels < 0) throw std::invalid_argument("pyramid_levels must be >= 0");
}

void FitConfig::validate_for_canvas(int width, int height) const {
  validate();
  if (crop_size > 0) {
    if (crop_size > width || crop_size > height)
      throw std::invalid_argument("crop_size exceeds the training canvas");
    if (crop_size % (1 << pyramid_levels) != 0)
      throw std::invalid_argument("crop_size must be a multiple of 2^pyramid_levels");
  }
}

std::string FitConfig::to_kv() const {
  std::ostringstream out;
  out << "# pointblend fit configuration\n";
  out << "iterations = " << iterations << "\n";
  out << "learning_rate = " << format_double(learning_rate) << "\n";
  out << "optimizer = "
      << (optimizer == Optimizer::AdaptiveMoment ? "adaptive-moment" : "plain-gradient") << "\n";
  out << "beta = " << format_double(beta) << "\n";
  out << "loss_rgb = " << (loss_rgb == RgbLoss::L1 ? "l1" : "l2") << "\n";
  out << "crop_size = " << crop_size << "\n";
  out << "zoom_min = " << format_double(zoom_min) << "\n";
  out << "zoom_max = " << format_double(zoom_max) << "\n";
  out << "use_jitter = " << (use_jitter ? "true" : "false") << "\n";
  out << "use_overlay = " << (use_overlay ? "true" : "false") << "\n";
  out << "max_ray_len = " << max_ray_len << "\n";
  out << "pyramid_levels = " << pyramid_levels << "\n";
  out << "head = " << (head_mode == HeadMode::Passthrough ? "passthrough" : "linear") << "\n";
  out << "seed = " << seed << "\n";
  return out.str();
}

FitConfig FitConfig::from_kv_text(const std::string& text) {
  FitConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) + " is not 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "iterations") cfg.iterations = std::stoi(value);
      else if (key == "learning_rate") cfg.learning_rate = std::stod(value);
      else if (key == "optimizer") {
        if (value == "adaptive-moment") cfg.optimizer = Optimizer::AdaptiveMoment;
        else if (value == "plain-gradient") cfg.optimizer = Optimizer::PlainGradient;
        else throw std::invalid_argument("unknown optimizer '" + value + "'");
      } else if (key == "beta") cfg.beta = std::stod(value);
      else if (key == "loss_rgb") {
        if (value == "l1" || value == "L1") cfg.loss_rgb = RgbLoss::L1;
        else if (value == "l2" || value == "L2") cfg.loss_rgb = RgbLoss::L2;
        else throw std::invalid_argument("unknown loss '" + value + "'");
      } else if (key == "crop_size") cfg.crop_size = std::stoi(value);
      else if (key == "zoom_min") cfg.zoom_min = std::stod(value);
      else if (key == "zoom_max") cfg.zoom_max = std::stod(value);
      else if (key == "use_jitter") cfg.use_jitter = parse_bool(value, key);
      else if (key == "use_overlay") cfg.use_overlay = parse_bool(value, key);
      else if (key == "max_ray_len") cfg.max_ray_len = std::stoi(value);
      else if (key == "pyramid_levels") cfg.pyramid_levels = std::stoi(value);
      else if (key == "head") {
        if (value == "passthrough") cfg.head_mode = HeadMode::Passthrough;
        else if (value == "linear") cfg.head_mode = HeadMode::Linear;
        else throw std::invalid_argument("unknown head mode '" + value + "'");
      } else if (key == "seed") cfg.seed = std::stoull(value);
      else throw std::invalid_argument("unknown config key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw;
    } catch (const std::exception&) {
      throw std::invalid_argument("config key '" + key + "' has malformed value '" + value + "'");
    }
  }
  cfg.validate();
  return cfg;
}

FitConfig FitConfig::from_kv_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_kv_text(buf.str());
}

void FitConfig::save_kv_file(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("cannot write config file " + path.string());
  out << to_kv();
}

LossResult compute_loss(const Image& pred_rgba, const Image& target, double beta, RgbLoss kind,
                        const Image* background) {
  if (pred_rgba.channels() != 4) throw std::invalid_argument("compute_loss expects an RGBA prediction");
  if (pred_rgba.width() != target.width() || pred_rgba.height() != target.height())
    throw std::invalid_argument("compute_loss prediction/target sizes differ");
  const bool rgba_target = target.channels() == 4;
  if (!rgba_target && target.channels() != 3)
    throw std::invalid_argument("compute_loss target must have 3 or 4 channels");
  if (!rgba_target && background == nullptr)
    throw std::invalid_argument("RGB target requires a background image");
  if (background != nullptr &&
      (background->width() != pred_rgba.width() || background->height() != pred_rgba.height() ||
       background->channels() != 3))
    throw std::invalid_argument("background image size does not match prediction");

  const int w = pred_rgba.width(), h = pred_rgba.height();
  const double n_pixels = static_cast<double>(w) * h;
  const double rgb_norm = 3.0 * n_pixels;

  LossResult result;
  result.grad = Image(w, h, 4);
  double loss = 0.0;

  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double d_alpha = 0.0;
      for (int c = 0; c < 3; ++c) {
        double pred_c = pred_rgba.at(y, x, c);
        if (!rgba_target) pred_c += (1.0 - pred_rgba.at(y, x, 3)) * background->at(y, x, c);
        const double delta = pred_c - target.at(y, x, c);
        double g;
        if (kind == RgbLoss::L1) {
          loss += std::abs(delta) / rgb_norm;
          g = (delta > 0.0 ? 1.0 : (delta < 0.0 ? -1.0 : 0.0)) / rgb_norm;
        } else {
          loss += delta * delta / rgb_norm;
          g = 2.0 * delta / rgb_norm;
        }
        result.grad.at(y, x, c) = g;
        if (!rgba_target) d_alpha += g * (-background->at(y, x, c));
      }
      if (rgba_target && beta > 0.0) {
        const double da = pred_rgba.at(y, x, 3) - target.at(y, x, 3);
        loss += beta * std::abs(da) / n_pixels;
        d_alpha += beta * (da > 0.0 ? 1.0 : (da < 0.0 ? -1.0 : 0.0)) / n_pixels;
      }
      result.grad.at(y, x, 3) = d_alpha;
    }
  result.value = loss;
  return result;
}

LossResult compute_loss(const Image& pred_rgba, const Image& target, const FitConfig& cfg,
                        const Image* background) {
  return compute_loss(pred_rgba, target, cfg.beta, cfg.loss_rgb, background);
}

Camera step_camera(const Camera& base, const StepSample& sample, int crop_w, int crop_h) {
  Camera cam = base;
  cam.fx *= sample.zoom;
  cam.fy *= sample.zoom;
  cam.cx = cam.cx * sample.zoom - sample.crop_x;
  cam.cy = cam.cy * sample.zoom - sample.crop_y;
  cam.width = crop_w;
  cam.height = crop_h;
  return cam;
}

Image pull_window(const Image& source, const StepSample& sample, int crop_w, int crop_h) {
  Image out(crop_w, crop_h, source.channels());
  for (int y = 0; y < crop_h; ++y)
    for (int x = 0; x < crop_w; ++x) {
      int sx, sy;
      if (sample.zoom == 1.0) {
        sx = sample.crop_x + x;
        sy = sample.crop_y + y;
      } else {
        sx = static_cast<int>(std::floor((sample.crop_x + x + 0.5) / sample.zoom));
        sy = static_cast<int>(std::floor((sample.crop_y + y + 0.5) / sample.zoom));
      }
      sx = std::clamp(sx, 0, source.width() - 1);
      sy = std::clamp(sy, 0, source.height() - 1);
      for (int c = 0; c < source.channels(); ++c) out.at(y, x, c) = source.at(sy, sx, c);
    }
  return out;
}

Image render_view(const Scene& scene, const Camera& camera, const HeadConfig& head, int levels,
                  int max_len, double jitter_p, bool force_opaque) {
  CompositeOptions opts;
  opts.jitter_p = jitter_p;
  opts.force_opaque = force_opaque;
  const Camera padded = padded_camera(camera, levels);
  const PyramidRender render = rasterize_pyramid(scene, padded, levels, max_len, opts);
  return crop_image(apply_head(render, head), camera.width, camera.height);
}

SceneGradients compute_scene_gradients(const Scene& scene, const Camera& camera,
                                       const Image& target, const Image* background, double beta,
                                       RgbLoss kind, const HeadConfig& head, int levels,
                                       int max_len, double jitter_p) {
  CompositeOptions opts;
  opts.jitter_p = jitter_p;
  const Camera padded = padded_camera(camera, levels);
  const PyramidRender render = rasterize_pyramid(scene, padded, levels, max_len, opts);
  const Image pred = crop_image(apply_head(render, head), camera.width, camera.height);
  LossResult loss = compute_loss(pred, target, beta, kind, background);

  SceneGradients out;
  out.loss = loss.value;
  const Image upstream = embed_image(loss.grad, padded.width, padded.height);
  const std::vector<RawImage> level_grads = head_backward(render, head, upstream, &out.head);
  out.descriptors = backward_full(scene, render, level_grads);
  return out;
}

namespace {

/// Everything fit() updates for one scene.
struct TrainedScene {
  Scene* scene = nullptr;
  ParamUpdater descriptors;
  ParamUpdater mu;

  void apply(const DescriptorGrad& grad, const FitConfig& cfg, bool update_mu) {
    descriptors.apply(scene->descriptors.values().data(), grad.values.data(), grad.values.size(),
                      cfg.learning_rate);
    if (update_mu) {
      const double g = grad.mu_grad;
      mu.apply(&scene->jitter_exponent, &g, 1, cfg.head_learning_rate());
      scene->jitter_exponent = std::max(0.0, scene->jitter_exponent);
    }
  }
};

struct TrainedHead {
  HeadConfig* head = nullptr;
  ParamUpdater weights;
  ParamUpdater bias;

  void apply(const HeadGrad& grad, const FitConfig& cfg) {
    if (head->mode != HeadMode::Linear) return;
    weights.apply(head->weights.data(), grad.weights.data(), grad.weights.size(),
                  cfg.head_learning_rate());
    bias.apply(head->bias.data(), grad.bias.data(), 4, cfg.head_learning_rate());
  }
};

void validate_fit_inputs(const Scene& scene, const FitDataset& data, const FitConfig& cfg,
                         const Image* background) {
  scene.validate();
  data.validate();
  cfg.validate();
  for (const auto& view : data.views) cfg.validate_for_canvas(view.camera.width, view.camera.height);
  if (data.kind == TargetKind::RGB && background == nullptr)
    throw std::invalid_argument("fitting against RGB targets requires a background image");
  if (data.kind == TargetKind::RGB && cfg.use_jitter)
    throw std::invalid_argument("alpha jitter requires RGBA targets");
  if (background != nullptr) {
    for (const auto& view : data.views)
      if (background->width() != view.camera.width || background->height() != view.camera.height ||
          background->channels() != 3)
        throw std::invalid_argument("background image must match every view canvas");
  }
}

}  // namespace

ViewMetrics evaluate_view(const Scene& scene, const HeadConfig& head, const FitDataset::View& view,
                          TargetKind kind, const Image* background, int levels, int max_len) {
  const Image pred = render_view(scene, view.camera, head, levels, max_len);
  ViewMetrics m;
  m.id = view.id;
  double abs_sum = 0.0, sq_sum = 0.0;
  std::size_t count = 0;
  if (kind == TargetKind::RGB) {
    const Image blended = blend_background(pred, *background);
    for (int y = 0; y < blended.height(); ++y)
      for (int x = 0; x < blended.width(); ++x)
        for (int c = 0; c < 3; ++c) {
          const double d = blended.at(y, x, c) - view.target.at(y, x, c);
          abs_sum += std::abs(d);
          sq_sum += d * d;
          ++count;
        }
  } else {
    for (int y = 0; y < pred.height(); ++y)
      for (int x = 0; x < pred.width(); ++x)
        for (int c = 0; c < 4; ++c) {
          const double d = pred.at(y, x, c) - view.target.at(y, x, c);
          abs_sum += std::abs(d);
          sq_sum += d * d;
          ++count;
        }
  }
  m.l1 = abs_sum / static_cast<double>(count);
  m.psnr = psnr_from_mse(sq_sum / static_cast<double>(count));
  return m;
}

FitResult fit(Scene scene, const FitDataset& data, const FitConfig& cfg, const Image* background,
              const FitProgress& progress) {
  const auto t_total = SteadyClock::now();
  validate_fit_inputs(scene, data, cfg, background);

  FitResult result;
  HeadConfig head = cfg.head_mode == HeadMode::Passthrough
                        ? HeadConfig::passthrough(scene.descriptors.dim())
                        : HeadConfig::linear_identity(scene.descriptors.dim());
  head.validate();

  TrainedScene trained;
  trained.scene = &scene;
  trained.descriptors.kind = cfg.optimizer;
  trained.mu.kind = cfg.optimizer;
  TrainedHead trained_head;
  trained_head.head = &head;
  trained_head.weights.kind = cfg.optimizer;
  trained_head.bias.kind = cfg.optimizer;

  std::mt19937_64 rng(cfg.seed);
  FitReport& report = result.report;
  report.loss_curve.reserve(static_cast<std::size_t>(cfg.iterations));

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    const auto t_render = SteadyClock::now();
    int crop_w = 0, crop_h = 0;
    const StepSample sample = draw_step(rng, cfg, data, &crop_w, &crop_h);
    const FitDataset::View* view = &data.views[static_cast<std::size_t>(sample.view)];

    const Camera cam = step_camera(view->camera, sample, crop_w, crop_h);
    Image target = pull_window(view->target, sample, crop_w, crop_h);
    if (sample.jitter) scale_alpha_channel(target, sample.p);

    Image bg_window;
    const Image* bg = nullptr;
    if (background != nullptr) {
      bg_window = pull_window(*background, sample, crop_w, crop_h);
      bg = &bg_window;
    }
    // RGBA targets with a supplied background train through the blended
    // comparison: both sides go through the same blend.
    Image target_for_loss = std::move(target);
    if (bg != nullptr && data.kind == TargetKind::RGBA)
      target_for_loss = blend_background(target_for_loss, *bg);

    report.seconds_render += seconds_since(t_render);
    const auto t_backward = SteadyClock::now();
    const SceneGradients grads =
        compute_scene_gradients(scene, cam, target_for_loss, bg, cfg.beta, cfg.loss_rgb, head,
                                cfg.pyramid_levels, cfg.max_ray_len, sample.jitter ? sample.p : 1.0);
    report.seconds_backward += seconds_since(t_backward);

    report.loss_curve.push_back(grads.loss);
    if (!std::isfinite(grads.loss)) {
      report.diverged = true;
      report.diverged_iteration = iter;
      break;
    }

    const auto t_update = SteadyClock::now();
    trained.apply(grads.descriptors, cfg, cfg.use_jitter);
    trained_head.apply(grads.head, cfg);
    report.seconds_update += seconds_since(t_update);

    if (progress) progress(iter, grads.loss, scene, head);
  }

  if (!report.diverged) {
    for (const auto& view : data.views)
      report.view_metrics.push_back(evaluate_view(scene, head, view, data.kind, background,
                                                  cfg.pyramid_levels, cfg.max_ray_len));
  }
  report.seconds_total = seconds_since(t_total);
  result.scene = std::move(scene);
  result.head = std::move(head);
  return result;
}

PairFitResult fit_pair_with_overlay(Scene scene_a, Scene scene_b, const FitDataset& data_a,
                                    const FitDataset& data_b, const FitConfig& cfg,
                                    const Image* background, const FitProgress& progress) {
  const auto t_total = SteadyClock::now();
  if (!cfg.use_overlay) throw std::invalid_argument("fit_pair_with_overlay requires use_overlay");
  if (data_a.kind != TargetKind::RGBA || data_b.kind != TargetKind::RGBA)
    throw std::invalid_argument("overlay fitting requires RGBA targets for both datasets");
  validate_fit_inputs(scene_a, data_a, cfg, background);
  validate_fit_inputs(scene_b, data_b, cfg, background);
  if (scene_a.descriptors.dim() != scene_b.descriptors.dim())
    throw std::invalid_argument("overlay fitting requires equal descriptor dimensionality");
  if (cfg.crop_size == 0) {
    const Camera& ca = data_a.views.front().camera;
    for (const auto& v : data_a.views)
      if (v.camera.width != ca.width || v.camera.height != ca.height)
        throw std::invalid_argument("overlay fitting without crops requires one shared canvas");
    for (const auto& v : data_b.views)
      if (v.camera.width != ca.width || v.camera.height != ca.height)
        throw std::invalid_argument("overlay fitting without crops requires one shared canvas");
  }

  PairFitResult result;
  HeadConfig head = cfg.head_mode == HeadMode::Passthrough
                        ? HeadConfig::passthrough(scene_a.descriptors.dim())
                        : HeadConfig::linear_identity(scene_a.descriptors.dim());
  head.validate();

  TrainedScene trained_a;
  trained_a.scene = &scene_a;
  TrainedScene trained_b;
  trained_b.scene = &scene_b;
  trained_a.descriptors.kind = trained_a.mu.kind = cfg.optimizer;
  trained_b.descriptors.kind = trained_b.mu.kind = cfg.optimizer;
  TrainedHead trained_head;
  trained_head.head = &head;
  trained_head.weights.kind = trained_head.bias.kind = cfg.optimizer;

  std::mt19937_64 rng(cfg.seed);
  FitReport& report = result.report;

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    const auto t_render = SteadyClock::now();
    int crop_w = 0, crop_h = 0;
    const StepSample sample_a = draw_step(rng, cfg, data_a, &crop_w, &crop_h);
    int crop_w_b = 0, crop_h_b = 0;
    const StepSample sample_b = draw_step(rng, cfg, data_b, &crop_w_b, &crop_h_b);
    if (crop_w_b != crop_w || crop_h_b != crop_h)
      throw std::invalid_argument("overlay fitting requires matching step canvases");
    const FitDataset::View& view_a = data_a.views[static_cast<std::size_t>(sample_a.view)];
    const FitDataset::View& view_b = data_b.views[static_cast<std::size_t>(sample_b.view)];

    const Camera cam_a = step_camera(view_a.camera, sample_a, crop_w, crop_h);
    const Camera cam_b = step_camera(view_b.camera, sample_b, crop_w, crop_h);
    Image target_a = pull_window(view_a.target, sample_a, crop_w, crop_h);
    Image target_b = pull_window(view_b.target, sample_b, crop_w, crop_h);
    if (sample_a.jitter) scale_alpha_channel(target_a, sample_a.p);
    if (sample_b.jitter) scale_alpha_channel(target_b, sample_b.p);

    CompositeOptions opts_a, opts_b;
    opts_a.jitter_p = sample_a.jitter ? sample_a.p : 1.0;
    opts_b.jitter_p = sample_b.jitter ? sample_b.p : 1.0;
    const Camera padded_a = padded_camera(cam_a, cfg.pyramid_levels);
    const Camera padded_b = padded_camera(cam_b, cfg.pyramid_levels);
    const PyramidRender render_a =
        rasterize_pyramid(scene_a, padded_a, cfg.pyramid_levels, cfg.max_ray_len, opts_a);
    const PyramidRender render_b =
        rasterize_pyramid(scene_b, padded_b, cfg.pyramid_levels, cfg.max_ray_len, opts_b);

    PyramidRender overlaid;
    overlaid.cameras = render_a.cameras;
    for (int t = 0; t < render_a.level_count(); ++t)
      overlaid.levels.push_back(overlay_raw(render_a.levels[static_cast<std::size_t>(t)],
                                            render_b.levels[static_cast<std::size_t>(t)]));

    const Image pred = crop_image(apply_head(overlaid, head), crop_w, crop_h);
    const Image target_ovl = overlay_targets(target_a, target_b);

    Image bg_window;
    const Image* bg = nullptr;
    Image target_for_loss = target_ovl;
    if (background != nullptr) {
      bg_window = pull_window(*background, sample_a, crop_w, crop_h);
      bg = &bg_window;
      target_for_loss = blend_background(target_ovl, bg_window);
    }
    LossResult loss = compute_loss(pred, target_for_loss, cfg.beta, cfg.loss_rgb, bg);
    report.seconds_render += seconds_since(t_render);

    report.loss_curve.push_back(loss.value);
    if (!std::isfinite(loss.value)) {
      report.diverged = true;
      report.diverged_iteration = iter;
      break;
    }

    const auto t_backward = SteadyClock::now();
    const Image upstream = embed_image(loss.grad, padded_a.width, padded_a.height);
    HeadGrad head_grad;
    const std::vector<RawImage> d_overlaid = head_backward(overlaid, head, upstream, &head_grad);

    std::vector<RawImage> d_a, d_b;
    d_a.reserve(d_overlaid.size());
    d_b.reserve(d_overlaid.size());
    for (int t = 0; t < render_a.level_count(); ++t) {
      const RawImage& fa = render_a.levels[static_cast<std::size_t>(t)];
      d_a.push_back(RawImage::zeros(fa.width(), fa.height(), fa.feature_dim()));
      d_b.push_back(RawImage::zeros(fa.width(), fa.height(), fa.feature_dim()));
      overlay_raw_backward(fa, render_b.levels[static_cast<std::size_t>(t)],
                           d_overlaid[static_cast<std::size_t>(t)], d_a.back(), d_b.back());
    }
    const DescriptorGrad grad_a = backward_full(scene_a, render_a, d_a);
    const DescriptorGrad grad_b = backward_full(scene_b, render_b, d_b);
    report.seconds_backward += seconds_since(t_backward);

    const auto t_update = SteadyClock::now();
    trained_a.apply(grad_a, cfg, cfg.use_jitter);
    trained_b.apply(grad_b, cfg, cfg.use_jitter);
    trained_head.apply(head_grad, cfg);
    report.seconds_update += seconds_since(t_update);

    if (progress) progress(iter, loss.value, scene_a, head);
  }

  if (!report.diverged) {
    for (const auto& view : data_a.views) {
      ViewMetrics m = evaluate_view(scene_a, head, view, data_a.kind, background,
                                    cfg.pyramid_levels, cfg.max_ray_len);
      m.id = "a:" + m.id;
      report.view_metrics.push_back(std::move(m));
    }
    for (const auto& view : data_b.views) {
      ViewMetrics m = evaluate_view(scene_b, head, view, data_b.kind, background,
                                    cfg.pyramid_levels, cfg.max_ray_len);
      m.id = "b:" + m.id;
      report.view_metrics.push_back(std::move(m));
    }
  }
  report.seconds_total = seconds_since(t_total);
  result.scene_a = std::move(scene_a);
  result.scene_b = std::move(scene_b);
  result.head = std::move(head);
  return result;
}

std::string FitReport::to_json() const {
  nlohmann::json j;
  j["loss_curve"] = loss_curve;
  j["diverged"] = diverged;
  if (diverged) j["diverged_iteration"] = diverged_iteration;
  j["seconds"] = {{"render", seconds_render},
                  {"backward", seconds_backward},
                  {"update", seconds_update},
                  {"total", seconds_total}};
  nlohmann::json views = nlohmann::json::array();
  for (const auto& m : view_metrics)
    views.push_back({{"id", m.id}, {"l1", m.l1}, {"psnr", m.psnr}});
  j["views"] = views;
  return j.dump(2);
}

}  // namespace pointblend
