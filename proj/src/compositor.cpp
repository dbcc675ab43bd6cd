// Copyright Contributors to the PointBlend Project
// SPDX-License-Identifier: Apache-2.0

#include "pointblend/compositor.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

#include "pointblend/parallel.hpp"

namespace pointblend {

double CompositeOptions::alpha_scale() const {
  if (force_opaque || jitter_p == 1.0) return 1.0;
  return std::pow(jitter_p, mu);
}

double activate_alpha(double raw) { return std::tanh(raw > 0.0 ? raw : 0.0); }

void blend_ray(const double* colors, const double* alphas, int len, int color_dim,
               double* color_out, double* alpha_out) {
  for (int c = 0; c < color_dim; ++c) color_out[c] = 0.0;
  double transmittance = 1.0;
  for (int k = 0; k < len; ++k) {
    const double a = alphas[k];
    if (!(a >= 0.0 && a <= 1.0))
      throw std::invalid_argument("blend_ray requires activated alphas in [0,1]");
    const double weight = a * transmittance;
    const double* ck = colors + static_cast<std::size_t>(k) * color_dim;
    for (int c = 0; c < color_dim; ++c) color_out[c] += weight * ck[c];
    transmittance *= 1.0 - a;
    if (transmittance == 0.0) {
      // Remaining points are fully occluded; alphas still need validating.
      for (int j = k + 1; j < len; ++j)
        if (!(alphas[j] >= 0.0 && alphas[j] <= 1.0))
          throw std::invalid_argument("blend_ray requires activated alphas in [0,1]");
      break;
    }
  }
  *alpha_out = 1.0 - transmittance;
}

std::pair<std::vector<double>, double> blend_ray(const std::vector<std::vector<double>>& colors,
                                                 const std::vector<double>& alphas) {
  if (colors.size() != alphas.size())
    throw std::invalid_argument("blend_ray color/alpha lists differ in length");
  const int color_dim = colors.empty() ? 0 : static_cast<int>(colors.front().size());
  std::vector<double> flat;
  flat.reserve(colors.size() * static_cast<std::size_t>(color_dim));
  for (const auto& c : colors) {
    if (static_cast<int>(c.size()) != color_dim)
      throw std::invalid_argument("blend_ray colors have inconsistent dimensionality");
    flat.insert(flat.end(), c.begin(), c.end());
  }
  std::vector<double> color_out(static_cast<std::size_t>(color_dim), 0.0);
  double alpha_out = 0.0;
  blend_ray(flat.data(), alphas.data(), static_cast<int>(alphas.size()), color_dim,
            color_out.data(), &alpha_out);
  return {std::move(color_out), alpha_out};
}

Image blend_background(const Image& rgb, const Image& alpha, const Image& background) {
  if (rgb.width() != alpha.width() || rgb.height() != alpha.height() ||
      !rgb.same_shape(background) || rgb.channels() != 3 || alpha.channels() != 1)
    throw std::invalid_argument("blend_background images have mismatched sizes");
  Image out(rgb.width(), rgb.height(), 3);
  for (int y = 0; y < rgb.height(); ++y)
    for (int x = 0; x < rgb.width(); ++x) {
      const double keep = 1.0 - alpha.at(y, x, 0);
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = keep * background.at(y, x, c) + rgb.at(y, x, c);
    }
  return out;
}

Image blend_background(const Image& rgba, const Image& background) {
  if (rgba.channels() != 4) throw std::invalid_argument("blend_background expects an RGBA image");
  if (rgba.width() != background.width() || rgba.height() != background.height() ||
      background.channels() != 3)
    throw std::invalid_argument("blend_background images have mismatched sizes");
  Image out(rgba.width(), rgba.height(), 3);
  for (int y = 0; y < rgba.height(); ++y)
    for (int x = 0; x < rgba.width(); ++x) {
      const double keep = 1.0 - rgba.at(y, x, 3);
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = keep * background.at(y, x, c) + rgba.at(y, x, c);
    }
  return out;
}

std::vector<double> jitter_alphas(const std::vector<double>& alphas, double p, double mu) {
  const double scale = std::pow(p, mu);
  std::vector<double> out(alphas.size());
  for (std::size_t i = 0; i < alphas.size(); ++i) out[i] = alphas[i] * scale;
  return out;
}

RawImage overlay_raw(const RawImage& front, const RawImage& back) {
  if (!front.features.same_shape(back.features) || !front.alpha.same_shape(back.alpha))
    throw std::invalid_argument("overlay_raw images have mismatched sizes");
  RawImage out = RawImage::zeros(front.width(), front.height(), front.feature_dim());
  const int dim = front.feature_dim();
  for (int y = 0; y < front.height(); ++y)
    for (int x = 0; x < front.width(); ++x) {
      const double af = front.alpha.at(y, x, 0);
      const double ab = back.alpha.at(y, x, 0);
      const double w = (1.0 - af) * ab;
      for (int c = 0; c < dim; ++c)
        out.features.at(y, x, c) = front.features.at(y, x, c) + back.features.at(y, x, c) * w;
      out.alpha.at(y, x, 0) = 1.0 - (1.0 - ab) * (1.0 - af);
    }
  return out;
}

Image overlay_targets(const Image& front_rgba, const Image& back_rgba) {
  if (!front_rgba.same_shape(back_rgba) || front_rgba.channels() != 4)
    throw std::invalid_argument("overlay_targets expects matching RGBA images");
  Image out(front_rgba.width(), front_rgba.height(), 4);
  for (int y = 0; y < front_rgba.height(); ++y)
    for (int x = 0; x < front_rgba.width(); ++x) {
      const double af = front_rgba.at(y, x, 3);
      const double ab = back_rgba.at(y, x, 3);
      const double w = (1.0 - af) * ab;
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = front_rgba.at(y, x, c) + back_rgba.at(y, x, c) * w;
      out.at(y, x, 3) = 1.0 - (1.0 - ab) * (1.0 - af);
    }
  return out;
}

RawImage composite_rays(const RayBuffer& rays, const DescriptorSet& descriptors,
                        const CompositeOptions& options, RasterTimings* timings) {
  const auto t0 = std::chrono::steady_clock::now();
  const int color_dim = descriptors.color_dim();
  const int alpha_channel = descriptors.dim() - 1;
  RawImage out = RawImage::zeros(rays.width, rays.height, color_dim);
  const double scale = options.alpha_scale();

  parallel_for(0, static_cast<std::int64_t>(rays.ray_count()), 2048,
               [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t p = lo; p < hi; ++p) {
      const std::int32_t len = rays.lengths[static_cast<std::size_t>(p)];
      if (len == 0) continue;
      const std::int32_t* ray = rays.indices.data() + static_cast<std::size_t>(p) * rays.max_len;
      double* features = out.features.data().data() + static_cast<std::size_t>(p) * color_dim;
      double transmittance = 1.0;
      for (std::int32_t k = 0; k < len; ++k) {
        const double* d = descriptors.row(static_cast<std::size_t>(ray[k]));
        double a;
        if (options.force_opaque) {
          a = 1.0;
        } else {
          a = activate_alpha(d[alpha_channel]);
          if (scale != 1.0) a *= scale;
        }
        const double weight = a * transmittance;
        for (int c = 0; c < color_dim; ++c) features[c] += weight * d[c];
        transmittance *= 1.0 - a;
        if (transmittance == 0.0) break;
      }
      out.alpha.data()[static_cast<std::size_t>(p)] = 1.0 - transmittance;
    }
  });
  if (timings)
    timings->blend_ms +=
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace pointblend
