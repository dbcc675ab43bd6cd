// Copyright Contributors to the PointBlend Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace pointblend {

/// Dense row-major image with interleaved channels. Values are doubles;
/// quantization to bytes happens only at PNG I/O boundaries.
class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels, double fill = 0.0)
      : width_(width),
        height_(height),
        channels_(channels),
        data_(static_cast<std::size_t>(width) * height * channels, fill) {
    assert(width >= 0 && height >= 0 && channels >= 0);
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  bool empty() const { return data_.empty(); }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }

  double& at(int y, int x, int c) { return data_[index(y, x, c)]; }
  double at(int y, int x, int c) const { return data_[index(y, x, c)]; }

  double* pixel(int y, int x) { return data_.data() + index(y, x, 0); }
  const double* pixel(int y, int x) const { return data_.data() + index(y, x, 0); }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Image& other) const {
    return width_ == other.width_ && height_ == other.height_ && channels_ == other.channels_;
  }

 private:
  std::size_t index(int y, int x, int c) const {
    assert(y >= 0 && y < height_ && x >= 0 && x < width_ && c >= 0 && c < channels_);
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

}  // namespace pointblend
