// Copyright Contributors to the PointBlend Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "pointblend/image.hpp"
#include "pointblend/raster.hpp"
#include "pointblend/scene.hpp"

namespace pointblend {

/// Blended feature image: premultiplied pseudocolor channels plus the
/// accumulated-opacity channel. Empty rays hold the null descriptor
/// (all-zero features, zero alpha).
struct RawImage {
  Image features;  // H x W x (M-1)
  Image alpha;     // H x W x 1

  int width() const { return alpha.width(); }
  int height() const { return alpha.height(); }
  int feature_dim() const { return features.channels(); }

  static RawImage zeros(int width, int height, int feature_dim) {
    return RawImage{Image(width, height, feature_dim), Image(width, height, 1)};
  }
};

/// Controls applied when turning stored raw transparencies into blend
/// weights.
struct CompositeOptions {
  double jitter_p = 1.0;     // alpha rescale base; activated alphas get * p^mu
  double mu = 1.0;           // scene-wise jitter exponent
  bool force_opaque = false; // debug: every activated alpha becomes exactly 1

  double alpha_scale() const;
};

/// ReLU then tanh: maps raw transparency to [0,1); raw <= 0 is fully
/// transparent.
double activate_alpha(double raw);

/// Front-to-back UNDER accumulation over one ray. colors is len rows of
/// color_dim channels; alphas must already be activated (in [0,1], else
/// std::invalid_argument). Writes the premultiplied color sum to color_out
/// and the accumulated opacity (1 - transmittance) to alpha_out.
void blend_ray(const double* colors, const double* alphas, int len, int color_dim,
               double* color_out, double* alpha_out);

/// Convenience wrapper over vectors of per-point colors.
std::pair<std::vector<double>, double> blend_ray(const std::vector<std::vector<double>>& colors,
                                                 const std::vector<double>& alphas);

/// Per pixel: out = (1 - A) * background + rgb, treating the rendered color
/// as premultiplied. rgb is HxWx3, alpha HxWx1, background HxWx3.
Image blend_background(const Image& rgb, const Image& alpha, const Image& background);

/// Same, taking an interleaved RGBA image.
Image blend_background(const Image& rgba, const Image& background);

/// alpha * p^mu for each entry. Inputs expected in [0,1].
std::vector<double> jitter_alphas(const std::vector<double>& alphas, double p, double mu);

/// Overlay operator on raw images, exactly as the augmentation defines it:
///   C = C_f + C_b * (1 - A_f) * A_b
///   A = 1 - (1 - A_b) * (1 - A_f)
RawImage overlay_raw(const RawImage& front, const RawImage& back);

/// The same overlay applied to (RGB, A) channels of RGBA images.
Image overlay_targets(const Image& front_rgba, const Image& back_rgba);

/// Blends every ray of a buffer into a raw image. Activation (and jitter /
/// force-opaque) is applied here; accumulation runs in double and stops
/// early once transmittance reaches exactly zero.
RawImage composite_rays(const RayBuffer& rays, const DescriptorSet& descriptors,
                        const CompositeOptions& options = {}, RasterTimings* timings = nullptr);

}  // namespace pointblend
