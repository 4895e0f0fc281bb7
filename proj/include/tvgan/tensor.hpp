#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tvgan/error.hpp"

namespace tvgan {

using Scalar = double;

// Dense channel-major (C, H, W) array. Images, feature maps and score maps
// all use this layout; element (c, y, x) lives at (c * H + y) * W + x.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int channels, int height, int width, Scalar fill = 0.0)
      : channels_(channels), height_(height), width_(width),
        data_(static_cast<std::size_t>(checked_size(channels, height, width)), fill) {}

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  int plane() const { return height_ * width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  Scalar& at(int c, int y, int x) { return data_[index(c, y, x)]; }
  Scalar at(int c, int y, int x) const { return data_[index(c, y, x)]; }
  Scalar& operator[](std::size_t i) { return data_[i]; }
  Scalar operator[](std::size_t i) const { return data_[i]; }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> values() { return data_; }
  std::span<const Scalar> values() const { return data_; }

  Scalar* channel(int c) { return data_.data() + static_cast<std::size_t>(c) * plane(); }
  const Scalar* channel(int c) const {
    return data_.data() + static_cast<std::size_t>(c) * plane();
  }

  bool same_shape(const Tensor& other) const {
    return channels_ == other.channels_ && height_ == other.height_ && width_ == other.width_;
  }

  std::string shape_string() const {
    return std::to_string(channels_) + "x" + std::to_string(height_) + "x" +
           std::to_string(width_);
  }

  void fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& other) {
    require_same_shape(other, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  Tensor& operator*=(Scalar s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  void require_same_shape(const Tensor& other, const char* what) const {
    if (!same_shape(other)) {
      throw ShapeError(std::string(what) + ": shape mismatch " + shape_string() + " vs " +
                       other.shape_string());
    }
  }

  bool operator==(const Tensor& other) const = default;

 private:
  static long checked_size(int c, int h, int w) {
    if (c < 0 || h < 0 || w < 0) throw ShapeError("negative tensor dimension");
    return static_cast<long>(c) * h * w;
  }
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<Scalar> data_;
};

// Images are tensors whose values live in the canonical [-1, 1] range.
using ImageTensor = Tensor;

// Channel-wise concatenation and its inverse.
Tensor concat_channels(const Tensor& a, const Tensor& b);
void split_channels(const Tensor& ab, int a_channels, Tensor& a, Tensor& b);

// Repeats a single-channel image to three channels; three-channel input is
// returned unchanged.
Tensor to_three_channels(const Tensor& image);

bool all_finite(std::span<const Scalar> values);

}  // namespace tvgan
