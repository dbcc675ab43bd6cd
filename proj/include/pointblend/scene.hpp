// Copyright Contributors to the PointBlend Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "pointblend/image.hpp"

namespace pointblend {

/// Proxy geometry: world-space positions. Point order is stable and is the
/// identity used to index descriptors.
struct PointCloud {
  std::vector<Eigen::Vector3d> positions;

  std::size_t size() const { return positions.size(); }

  /// Throws std::invalid_argument if empty or any coordinate is non-finite.
  void validate() const;
};

/// N x M learnable vectors. Channels 0..M-2 are the pseudocolor, channel
/// M-1 is the raw (pre-activation) transparency scalar.
class DescriptorSet {
 public:
  DescriptorSet() = default;
  DescriptorSet(std::size_t count, int dim, double fill = 0.0)
      : dim_(dim), values_(count * static_cast<std::size_t>(dim), fill) {}

  /// Uniform random init: pseudocolor channels in [-kInitScale, kInitScale],
  /// the transparency channel in (0, kInitScale]. Keeps the initial activated
  /// alpha near zero while leaving every point trainable.
  static DescriptorSet random_init(std::size_t count, int dim, std::uint64_t seed);

  static constexpr double kInitScale = 0.01;
  static constexpr int kDefaultDim = 8;

  int dim() const { return dim_; }
  int color_dim() const { return dim_ - 1; }
  std::size_t count() const { return dim_ == 0 ? 0 : values_.size() / dim_; }

  double* row(std::size_t i) { return values_.data() + i * dim_; }
  const double* row(std::size_t i) const { return values_.data() + i * dim_; }

  double raw_alpha(std::size_t i) const { return row(i)[dim_ - 1]; }

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  bool same_shape(const DescriptorSet& other) const {
    return dim_ == other.dim_ && values_.size() == other.values_.size();
  }

  /// Throws std::invalid_argument on non-finite entries or dim < 2.
  void validate() const;

 private:
  int dim_ = 0;
  std::vector<double> values_;
};

/// Pinhole camera: world->camera rotation/translation, intrinsics in pixels,
/// integer canvas.
struct Camera {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  static constexpr double kOrthonormalTol = 1e-6;

  /// Throws std::invalid_argument when the rotation is not orthonormal
  /// within kOrthonormalTol or the canvas/intrinsics are degenerate.
  void validate() const;
};

/// A point cloud bound to its descriptors plus the scene-wise jitter
/// exponent mu (learnable, clamped >= 0 during fitting).
struct Scene {
  PointCloud cloud;
  DescriptorSet descriptors;
  double jitter_exponent = 1.0;
  std::string label;

  void validate() const;
};

enum class TargetKind { RGB, RGBA };

/// Multi-view supervision for one scene.
struct FitDataset {
  struct View {
    std::string id;
    Camera camera;
    Image target;  // 3 or 4 channels, values in [0,1], canvas-sized
  };

  std::vector<View> views;
  TargetKind kind = TargetKind::RGBA;

  void validate() const;
};

/// result[i] = (1-t)*a[i] + t*b[i]. Exact at t=0, t=1 and when a == b.
/// Throws std::invalid_argument on shape mismatch.
DescriptorSet interpolate_descriptors(const DescriptorSet& a, const DescriptorSet& b, double t);

/// Portable uniform double in [0,1) built from the top 53 bits of a
/// mt19937_64 draw; avoids distribution implementation differences.
double uniform_unit(std::uint64_t bits);

}  // namespace pointblend
