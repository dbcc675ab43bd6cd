// Copyright Contributors to the PointBlend Project
// SPDX-License-Identifier: Apache-2.0

#include "pointblend/head.hpp"

#include <stdexcept>

namespace pointblend {

HeadConfig HeadConfig::passthrough(int input_dim) {
  HeadConfig head;
  head.mode = HeadMode::Passthrough;
  head.input_dim = input_dim;
  return head;
}

HeadConfig HeadConfig::linear_identity(int input_dim) {
  HeadConfig head;
  head.mode = HeadMode::Linear;
  head.input_dim = input_dim;
  head.weights.assign(head.weight_count(), 0.0);
  for (int o = 0; o < 3 && o < input_dim - 1; ++o) head.weights[static_cast<std::size_t>(o) * 4 + o] = 1.0;
  head.weights[static_cast<std::size_t>(input_dim - 1) * 4 + 3] = 1.0;
  return head;
}

void HeadConfig::validate() const {
  if (input_dim < 2) throw std::invalid_argument("head input dimensionality must be at least 2");
  if (mode == HeadMode::Passthrough) {
    if (input_dim - 1 < 3)
      throw std::invalid_argument("passthrough head requires at least 3 pseudocolor channels");
  } else if (weights.size() != weight_count()) {
    throw std::invalid_argument("linear head weight matrix must be input_dim x 4");
  }
}

namespace {

/// Finest level whose accumulated alpha clears the threshold; the coarsest
/// level is the unconditional fallback.
int fused_level(const PyramidRender& render, double threshold, int y, int x) {
  const int last = render.level_count() - 1;
  for (int t = 0; t < last; ++t) {
    if (render.levels[static_cast<std::size_t>(t)].alpha.at(y >> t, x >> t, 0) > threshold) return t;
  }
  return last;
}

}  // namespace

Image apply_head(const PyramidRender& render, const HeadConfig& head) {
  head.validate();
  if (render.levels.empty()) throw std::invalid_argument("apply_head requires a rendered pyramid");
  const RawImage& base = render.levels.front();
  if (base.feature_dim() + 1 != head.input_dim)
    throw std::invalid_argument("head input dimensionality does not match raw image");

  Image out(base.width(), base.height(), 4);
  if (head.mode == HeadMode::Passthrough) {
    for (int y = 0; y < base.height(); ++y)
      for (int x = 0; x < base.width(); ++x) {
        const int t = fused_level(render, head.fusion_threshold, y, x);
        const RawImage& level = render.levels[static_cast<std::size_t>(t)];
        const int ly = y >> t, lx = x >> t;
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = level.features.at(ly, lx, c);
        out.at(y, x, 3) = level.alpha.at(ly, lx, 0);
      }
    return out;
  }

  const int m = head.input_dim;
  for (int y = 0; y < base.height(); ++y)
    for (int x = 0; x < base.width(); ++x) {
      const double* f = base.features.pixel(y, x);
      const double a = base.alpha.at(y, x, 0);
      for (int o = 0; o < 4; ++o) {
        double v = head.bias[static_cast<std::size_t>(o)];
        for (int i = 0; i < m - 1; ++i) v += head.weights[static_cast<std::size_t>(i) * 4 + o] * f[i];
        v += head.weights[static_cast<std::size_t>(m - 1) * 4 + o] * a;
        out.at(y, x, o) = v;
      }
    }
  return out;
}

std::vector<RawImage> head_backward(const PyramidRender& render, const HeadConfig& head,
                                    const Image& d_rgba, HeadGrad* head_grad) {
  head.validate();
  if (render.levels.empty()) throw std::invalid_argument("head_backward requires a rendered pyramid");
  const RawImage& base = render.levels.front();
  if (d_rgba.width() != base.width() || d_rgba.height() != base.height() || d_rgba.channels() != 4)
    throw std::invalid_argument("head_backward upstream image does not match the pyramid");

  std::vector<RawImage> grads;
  grads.reserve(render.levels.size());
  for (const RawImage& level : render.levels)
    grads.push_back(RawImage::zeros(level.width(), level.height(), level.feature_dim()));

  if (head.mode == HeadMode::Passthrough) {
    for (int y = 0; y < base.height(); ++y)
      for (int x = 0; x < base.width(); ++x) {
        const int t = fused_level(render, head.fusion_threshold, y, x);
        RawImage& g = grads[static_cast<std::size_t>(t)];
        const int ly = y >> t, lx = x >> t;
        for (int c = 0; c < 3; ++c) g.features.at(ly, lx, c) += d_rgba.at(y, x, c);
        g.alpha.at(ly, lx, 0) += d_rgba.at(y, x, 3);
      }
    if (head_grad) {
      head_grad->weights.clear();
      head_grad->bias = {};
    }
    return grads;
  }

  const int m = head.input_dim;
  if (head_grad) {
    head_grad->weights.assign(head.weight_count(), 0.0);
    head_grad->bias = {};
  }
  RawImage& g0 = grads.front();
  for (int y = 0; y < base.height(); ++y)
    for (int x = 0; x < base.width(); ++x) {
      const double* f = base.features.pixel(y, x);
      const double a = base.alpha.at(y, x, 0);
      double* gf = g0.features.pixel(y, x);
      double ga = 0.0;
      for (int o = 0; o < 4; ++o) {
        const double d = d_rgba.at(y, x, o);
        if (d == 0.0) continue;
        for (int i = 0; i < m - 1; ++i) gf[i] += head.weights[static_cast<std::size_t>(i) * 4 + o] * d;
        ga += head.weights[static_cast<std::size_t>(m - 1) * 4 + o] * d;
        if (head_grad) {
          for (int i = 0; i < m - 1; ++i) head_grad->weights[static_cast<std::size_t>(i) * 4 + o] += f[i] * d;
          head_grad->weights[static_cast<std::size_t>(m - 1) * 4 + o] += a * d;
          head_grad->bias[static_cast<std::size_t>(o)] += d;
        }
      }
      g0.alpha.at(y, x, 0) += ga;
    }
  return grads;
}

}  // namespace pointblend
