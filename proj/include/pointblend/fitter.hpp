// Copyright Contributors to the PointBlend Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pointblend/gradients.hpp"
#include "pointblend/head.hpp"

namespace pointblend {

enum class Optimizer { PlainGradient, AdaptiveMoment };
enum class RgbLoss { L1, L2 };

struct FitConfig {
  int iterations = 1000;
  double learning_rate = 1e-2;
  Optimizer optimizer = Optimizer::AdaptiveMoment;
  double beta = 1.0;  // weight of the alpha L1 term when targets carry alpha
  RgbLoss loss_rgb = RgbLoss::L1;
  int crop_size = 0;  // 0 = full canvas
  double zoom_min = 1.0;
  double zoom_max = 1.0;
  bool use_jitter = false;
  bool use_overlay = false;
  int max_ray_len = kDefaultMaxRayLen;
  int pyramid_levels = kDefaultPyramidLevels;
  HeadMode head_mode = HeadMode::Passthrough;
  std::uint64_t seed = 0;

  /// Mu and head parameters train at a tenth of the descriptor rate.
  double head_learning_rate() const { return 0.1 * learning_rate; }

  void validate() const;
  /// Additional checks that need the training canvas (crop_size bounds and
  /// pyramid alignment).
  void validate_for_canvas(int width, int height) const;

  /// Flat key-value text form ('#' comments, one key per field).
  std::string to_kv() const;
  static FitConfig from_kv_text(const std::string& text);
  static FitConfig from_kv_file(const std::filesystem::path& path);
  void save_kv_file(const std::filesystem::path& path) const;
};

struct LossResult {
  double value = 0.0;
  Image grad;  // d(loss)/d(pred RGBA), 4 channels
};

/// Mean per-pixel mismatch between a predicted RGBA image and a target,
/// plus its exact gradient. RGB targets are compared after background
/// blending (background required); RGBA targets add the beta-weighted L1
/// alpha term.
LossResult compute_loss(const Image& pred_rgba, const Image& target, double beta, RgbLoss kind,
                        const Image* background);
LossResult compute_loss(const Image& pred_rgba, const Image& target, const FitConfig& cfg,
                        const Image* background);

struct ViewMetrics {
  std::string id;
  double l1 = 0.0;
  double psnr = 0.0;
};

struct FitReport {
  std::vector<double> loss_curve;
  std::vector<ViewMetrics> view_metrics;
  double seconds_render = 0.0;
  double seconds_backward = 0.0;
  double seconds_update = 0.0;
  double seconds_total = 0.0;
  bool diverged = false;
  int diverged_iteration = -1;

  std::string to_json() const;
};

/// Per-step augmentation draw: view choice, zoom factor, crop origin,
/// jitter coin and base p.
struct StepSample {
  int view = 0;
  double zoom = 1.0;
  int crop_x = 0;
  int crop_y = 0;
  bool jitter = false;
  double p = 1.0;
};

/// Camera for one training step: intrinsics scaled by the zoom factor, then
/// shifted by the crop origin, canvas set to the crop size.
Camera step_camera(const Camera& base, const StepSample& sample, int crop_w, int crop_h);

/// Target (or background) window matching step_camera: for zoom == 1 this is
/// the exact crop restriction; otherwise a nearest-neighbor pullback through
/// the zoom (index remap only, no filtering).
Image pull_window(const Image& source, const StepSample& sample, int crop_w, int crop_h);

/// Renders a view end to end: pads the canvas for the pyramid, rasterizes,
/// decodes through the head and crops back to the camera canvas.
Image render_view(const Scene& scene, const Camera& camera, const HeadConfig& head, int levels,
                  int max_len, double jitter_p = 1.0, bool force_opaque = false);

struct SceneGradients {
  double loss = 0.0;
  DescriptorGrad descriptors;
  HeadGrad head;
};

/// One full differentiable pass: render, decode, loss, and the exact
/// adjoints back to descriptors, mu and head parameters.
SceneGradients compute_scene_gradients(const Scene& scene, const Camera& camera,
                                       const Image& target, const Image* background, double beta,
                                       RgbLoss kind, const HeadConfig& head, int levels,
                                       int max_len, double jitter_p = 1.0);

using FitProgress =
    std::function<void(int iteration, double loss, const Scene& scene, const HeadConfig& head)>;

struct FitResult {
  Scene scene;
  HeadConfig head;
  FitReport report;
};

/// Optimizes descriptors (plus mu and head weights) against the dataset.
/// Deterministic given cfg.seed. A non-finite loss aborts the loop and marks
/// the report diverged instead of throwing.
FitResult fit(Scene scene, const FitDataset& data, const FitConfig& cfg,
              const Image* background = nullptr, const FitProgress& progress = nullptr);

struct PairFitResult {
  Scene scene_a;
  Scene scene_b;
  HeadConfig head;
  FitReport report;
};

/// Overlay-augmented joint fit: each step renders both scenes, combines the
/// raw pyramids and targets with the overlay operator (scene_a in front) and
/// backpropagates into both descriptor sets through one shared head.
PairFitResult fit_pair_with_overlay(Scene scene_a, Scene scene_b, const FitDataset& data_a,
                                    const FitDataset& data_b, const FitConfig& cfg,
                                    const Image* background = nullptr,
                                    const FitProgress& progress = nullptr);

/// Image quality metrics against a target of 3 or 4 channels (RGB targets
/// compare after background blending).
ViewMetrics evaluate_view(const Scene& scene, const HeadConfig& head, const FitDataset::View& view,
                          TargetKind kind, const Image* background, int levels, int max_len);

}  // namespace pointblend
