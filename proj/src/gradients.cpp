// Copyright Contributors to the PointBlend Project
// SPDX-License-Identifier: Apache-2.0

#include "pointblend/gradients.hpp"

#include <cmath>
#include <stdexcept>

namespace pointblend {

double activation_backward(double raw, double upstream) {
  if (!(raw > 0.0)) return 0.0;
  const double th = std::tanh(raw);
  return upstream * (1.0 - th * th);
}

void blend_ray_backward(const double* colors, const double* alphas, int len, int color_dim,
                        const double* d_color, double d_alpha, double* d_colors_out,
                        double* d_alphas_out) {
  // Prefix transmittances T[k] = prod_{j<k} (1 - a_j). Scratch is
  // thread-local: this runs once per non-empty ray.
  static thread_local std::vector<double> prefix;
  static thread_local std::vector<double> suffix_color;
  prefix.resize(static_cast<std::size_t>(len) + 1);
  prefix[0] = 1.0;
  for (int k = 0; k < len; ++k) prefix[static_cast<std::size_t>(k) + 1] = prefix[k] * (1.0 - alphas[k]);

  // Reverse sweep. Before handling point k:
  //   suffix_t         = prod_{j>k} (1 - a_j)
  //   suffix_color[ch] = sum_{j>k} a_j c_j[ch] prod_{k<m<j} (1 - a_m)
  // so that dC/da_k = T[k] * (c_k - suffix_color) and dA/da_k = T[k] * suffix_t.
  suffix_color.assign(static_cast<std::size_t>(color_dim), 0.0);
  double suffix_t = 1.0;
  for (int k = len - 1; k >= 0; --k) {
    const double a = alphas[k];
    const double t_before = prefix[static_cast<std::size_t>(k)];
    const double* ck = colors + static_cast<std::size_t>(k) * color_dim;
    double* dck = d_colors_out + static_cast<std::size_t>(k) * color_dim;

    double da = d_alpha * suffix_t;
    for (int c = 0; c < color_dim; ++c) {
      dck[c] = d_color[c] * a * t_before;
      da += d_color[c] * (ck[c] - suffix_color[static_cast<std::size_t>(c)]);
    }
    d_alphas_out[k] = t_before * da;

    suffix_t *= 1.0 - a;
    for (int c = 0; c < color_dim; ++c)
      suffix_color[static_cast<std::size_t>(c)] =
          a * ck[c] + (1.0 - a) * suffix_color[static_cast<std::size_t>(c)];
  }
}

std::pair<std::vector<std::vector<double>>, std::vector<double>> blend_ray_backward(
    const std::vector<std::vector<double>>& colors, const std::vector<double>& alphas,
    const std::vector<double>& d_color, double d_alpha) {
  if (colors.size() != alphas.size())
    throw std::invalid_argument("blend_ray_backward color/alpha lists differ in length");
  const int color_dim = static_cast<int>(d_color.size());
  std::vector<double> flat;
  flat.reserve(colors.size() * static_cast<std::size_t>(color_dim));
  for (const auto& c : colors) {
    if (static_cast<int>(c.size()) != color_dim)
      throw std::invalid_argument("blend_ray_backward colors have inconsistent dimensionality");
    flat.insert(flat.end(), c.begin(), c.end());
  }
  std::vector<double> d_flat(flat.size(), 0.0);
  std::vector<double> d_alphas(alphas.size(), 0.0);
  blend_ray_backward(flat.data(), alphas.data(), static_cast<int>(alphas.size()), color_dim,
                     d_color.data(), d_alpha, d_flat.data(), d_alphas.data());
  std::vector<std::vector<double>> d_colors(colors.size());
  for (std::size_t k = 0; k < colors.size(); ++k)
    d_colors[k].assign(d_flat.begin() + static_cast<std::ptrdiff_t>(k) * color_dim,
                       d_flat.begin() + static_cast<std::ptrdiff_t>(k + 1) * color_dim);
  return {std::move(d_colors), std::move(d_alphas)};
}

DescriptorGrad backward_full(const Scene& scene, const PyramidRender& render,
                             const std::vector<RawImage>& upstream) {
  if (render.levels.empty() || render.rays.size() != render.levels.size())
    throw std::invalid_argument("backward_full requires a retained forward pass");
  if (upstream.size() != render.levels.size())
    throw std::invalid_argument("backward_full upstream level count does not match forward pass");

  const DescriptorSet& desc = scene.descriptors;
  const int color_dim = desc.color_dim();
  const int alpha_channel = desc.dim() - 1;
  const CompositeOptions& opts = render.options;
  const double scale = opts.alpha_scale();
  const bool jitter_active = !opts.force_opaque && opts.jitter_p != 1.0 && opts.jitter_p > 0.0;
  const double log_p = jitter_active ? std::log(opts.jitter_p) : 0.0;

  DescriptorGrad grad(desc.count(), desc.dim());

  std::vector<double> colors;
  std::vector<double> acts;
  std::vector<double> d_colors;
  std::vector<double> d_alphas;

  for (std::size_t t = 0; t < render.levels.size(); ++t) {
    const RayBuffer& rays = render.rays[t];
    const RawImage& up = upstream[t];
    if (up.width() != rays.width || up.height() != rays.height || up.feature_dim() != color_dim)
      throw std::invalid_argument("backward_full upstream image does not match forward pass");

    for (std::size_t p = 0; p < rays.ray_count(); ++p) {
      const std::int32_t len = rays.lengths[p];
      if (len == 0) continue;
      const std::int32_t* ray = rays.indices.data() + p * static_cast<std::size_t>(rays.max_len);
      const double* d_color = up.features.data().data() + p * static_cast<std::size_t>(color_dim);
      const double d_alpha = up.alpha.data()[p];

      colors.resize(static_cast<std::size_t>(len) * color_dim);
      acts.resize(static_cast<std::size_t>(len));
      for (std::int32_t k = 0; k < len; ++k) {
        const double* row = desc.row(static_cast<std::size_t>(ray[k]));
        for (int c = 0; c < color_dim; ++c) colors[static_cast<std::size_t>(k) * color_dim + c] = row[c];
        acts[static_cast<std::size_t>(k)] =
            opts.force_opaque ? 1.0 : activate_alpha(row[alpha_channel]) * scale;
      }

      d_colors.assign(colors.size(), 0.0);
      d_alphas.assign(acts.size(), 0.0);
      blend_ray_backward(colors.data(), acts.data(), len, color_dim, d_color, d_alpha,
                         d_colors.data(), d_alphas.data());

      for (std::int32_t k = 0; k < len; ++k) {
        double* grow = grad.row(static_cast<std::size_t>(ray[k]));
        for (int c = 0; c < color_dim; ++c)
          grow[c] += d_colors[static_cast<std::size_t>(k) * color_dim + c];
        if (opts.force_opaque) continue;
        const double raw = desc.row(static_cast<std::size_t>(ray[k]))[alpha_channel];
        const double d_act = d_alphas[static_cast<std::size_t>(k)];
        grow[alpha_channel] += activation_backward(raw, d_act * scale);
        if (jitter_active) grad.mu_grad += d_act * activate_alpha(raw) * scale * log_p;
      }
    }
  }
  return grad;
}

void overlay_raw_backward(const RawImage& front, const RawImage& back, const RawImage& upstream,
                          RawImage& d_front, RawImage& d_back) {
  if (!front.features.same_shape(back.features) || !front.features.same_shape(upstream.features) ||
      !front.features.same_shape(d_front.features) || !front.features.same_shape(d_back.features))
    throw std::invalid_argument("overlay_raw_backward images have mismatched sizes");
  const int dim = front.feature_dim();
  for (int y = 0; y < front.height(); ++y)
    for (int x = 0; x < front.width(); ++x) {
      const double af = front.alpha.at(y, x, 0);
      const double ab = back.alpha.at(y, x, 0);
      const double d_a = upstream.alpha.at(y, x, 0);
      double daf = d_a * (1.0 - ab);
      double dab = d_a * (1.0 - af);
      for (int c = 0; c < dim; ++c) {
        const double d_c = upstream.features.at(y, x, c);
        const double cb = back.features.at(y, x, c);
        d_front.features.at(y, x, c) += d_c;
        d_back.features.at(y, x, c) += d_c * (1.0 - af) * ab;
        daf += d_c * (-cb * ab);
        dab += d_c * cb * (1.0 - af);
      }
      d_front.alpha.at(y, x, 0) += daf;
      d_back.alpha.at(y, x, 0) += dab;
    }
}

}  // namespace pointblend
