// Copyright Contributors to the PointBlend Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <vector>

#include "pointblend/render.hpp"

namespace pointblend {

enum class HeadMode { Passthrough, Linear };

/// Differentiable per-pixel decoder from raw images to RGBA.
///
/// Passthrough maps features[0..2] -> RGB and accumulated alpha -> A at full
/// resolution; a finer pyramid level overrides coarser ones only where its
/// accumulated alpha exceeds fusion_threshold, with the coarsest level as
/// the final fallback.
///
/// Linear maps the level-0 raw image's M channels affinely to RGBA; the
/// weights and bias are learnable jointly with the descriptors.
struct HeadConfig {
  HeadMode mode = HeadMode::Passthrough;
  int input_dim = DescriptorSet::kDefaultDim;
  double fusion_threshold = 0.05;
  std::vector<double> weights;  // input_dim x 4, row-major, linear mode only
  std::array<double, 4> bias{};

  static HeadConfig passthrough(int input_dim = DescriptorSet::kDefaultDim);
  /// Linear head initialized to reproduce passthrough on the first three
  /// feature channels and the alpha channel.
  static HeadConfig linear_identity(int input_dim = DescriptorSet::kDefaultDim);

  std::size_t weight_count() const { return static_cast<std::size_t>(input_dim) * 4; }
  void validate() const;
};

struct HeadGrad {
  std::vector<double> weights;
  std::array<double, 4> bias{};
};

/// Decodes a rendered pyramid into an RGBA image at the level-0 resolution.
Image apply_head(const PyramidRender& render, const HeadConfig& head);

/// Backward of apply_head: splits d(loss)/d(RGBA) into per-level raw-image
/// gradients (RawImage layout, to feed backward_full) and, for the linear
/// mode, weight/bias gradients.
std::vector<RawImage> head_backward(const PyramidRender& render, const HeadConfig& head,
                                    const Image& d_rgba, HeadGrad* head_grad);

}  // namespace pointblend
