// Copyright Contributors to the PointBlend Project
// SPDX-License-Identifier: Apache-2.0

#include "pointblend/scene.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace pointblend {

void PointCloud::validate() const {
  if (positions.empty()) throw std::invalid_argument("point cloud must contain at least one point");
  for (const auto& p : positions) {
    if (!p.allFinite()) throw std::invalid_argument("point cloud contains non-finite coordinates");
  }
}

DescriptorSet DescriptorSet::random_init(std::size_t count, int dim, std::uint64_t seed) {
  DescriptorSet set(count, dim);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    double* row = set.row(i);
    for (int c = 0; c < dim - 1; ++c) row[c] = (2.0 * uniform_unit(rng()) - 1.0) * kInitScale;
    // The transparency channel starts strictly positive: the ReLU subgradient
    // at and below zero is 0, so a non-positive start could never train.
    row[dim - 1] = (1.0 - uniform_unit(rng())) * kInitScale;
  }
  return set;
}

void DescriptorSet::validate() const {
  if (dim_ < 2) throw std::invalid_argument("descriptor dimensionality must be at least 2");
  for (double v : values_) {
    if (!std::isfinite(v)) throw std::invalid_argument("descriptor set contains non-finite values");
  }
}

void Camera::validate() const {
  if (width < 1 || height < 1) throw std::invalid_argument("camera canvas must be at least 1x1");
  if (!(fx > 0.0) || !(fy > 0.0)) throw std::invalid_argument("camera focal lengths must be positive");
  if (!rotation.allFinite() || !translation.allFinite() || !std::isfinite(cx) || !std::isfinite(cy))
    throw std::invalid_argument("camera parameters must be finite");
  const Eigen::Matrix3d gram = rotation.transpose() * rotation;
  if ((gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > kOrthonormalTol)
    throw std::invalid_argument("camera rotation is not orthonormal within tolerance");
}

void Scene::validate() const {
  cloud.validate();
  descriptors.validate();
  if (descriptors.count() != cloud.size())
    throw std::invalid_argument("descriptor row count must equal point count");
  if (!(jitter_exponent >= 0.0)) throw std::invalid_argument("jitter exponent must be >= 0");
}

void FitDataset::validate() const {
  if (views.empty()) throw std::invalid_argument("fit dataset must contain at least one view");
  const int want_channels = kind == TargetKind::RGB ? 3 : 4;
  for (const auto& view : views) {
    view.camera.validate();
    if (view.target.channels() != want_channels)
      throw std::invalid_argument("target channel count does not match dataset kind for view " + view.id);
    if (view.target.width() != view.camera.width || view.target.height() != view.camera.height)
      throw std::invalid_argument("target image does not match camera canvas for view " + view.id);
    if (kind == TargetKind::RGBA) {
      for (int y = 0; y < view.target.height(); ++y)
        for (int x = 0; x < view.target.width(); ++x) {
          const double a = view.target.at(y, x, 3);
          if (a < 0.0 || a > 1.0)
            throw std::invalid_argument("target alpha outside [0,1] for view " + view.id);
        }
    }
  }
}

DescriptorSet interpolate_descriptors(const DescriptorSet& a, const DescriptorSet& b, double t) {
  if (!a.same_shape(b)) throw std::invalid_argument("descriptor sets have mismatched shapes");
  DescriptorSet out(a.count(), a.dim());
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = std::lerp(av[i], bv[i], t);
  return out;
}

double uniform_unit(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

}  // namespace pointblend
