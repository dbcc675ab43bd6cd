// Copyright Contributors to the PointBlend Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "pointblend/render.hpp"

namespace pointblend {

/// Loss gradients with respect to every descriptor entry (same N x M layout
/// as DescriptorSet) plus the scene-wise jitter exponent. Points absent from
/// every ray carry exactly zero gradient.
struct DescriptorGrad {
  int dim = 0;
  std::vector<double> values;
  double mu_grad = 0.0;

  DescriptorGrad() = default;
  DescriptorGrad(std::size_t count, int dim_in)
      : dim(dim_in), values(count * static_cast<std::size_t>(dim_in), 0.0) {}

  double* row(std::size_t i) { return values.data() + i * dim; }
  const double* row(std::size_t i) const { return values.data() + i * dim; }
};

/// Adjoint of the ReLU+tanh activation. The subgradient at raw == 0 is 0, so
/// exactly-dead points stay dead.
double activation_backward(double raw, double upstream);

/// Adjoint of blend_ray. Contracts the Jacobian of (C_final, A_final) with
/// the upstream (d_color, d_alpha) without ever dividing by (1 - alpha):
/// prefix transmittances are recomputed forward, suffix products and
/// suffix-weighted color sums accumulate in a reverse sweep.
void blend_ray_backward(const double* colors, const double* alphas, int len, int color_dim,
                        const double* d_color, double d_alpha, double* d_colors_out,
                        double* d_alphas_out);

/// Vector convenience wrapper mirroring the blend_ray wrapper.
std::pair<std::vector<std::vector<double>>, std::vector<double>> blend_ray_backward(
    const std::vector<std::vector<double>>& colors, const std::vector<double>& alphas,
    const std::vector<double>& d_color, double d_alpha);

/// Accumulates per-point gradients across every ray and pyramid level of a
/// retained forward pass. upstream holds, per level, d(loss)/d(features) and
/// d(loss)/d(alpha) in RawImage layout. Throws std::invalid_argument when
/// the forward state is missing or shapes disagree.
DescriptorGrad backward_full(const Scene& scene, const PyramidRender& render,
                             const std::vector<RawImage>& upstream);

/// Adjoint of overlay_raw: splits an upstream raw-image gradient into
/// gradients for the front and back layers. d_front/d_back are accumulated
/// into (callers zero-initialize).
void overlay_raw_backward(const RawImage& front, const RawImage& back, const RawImage& upstream,
                          RawImage& d_front, RawImage& d_back);

}  // namespace pointblend
