// Copyright 2026 The MCGR Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mcgr/tensor.hpp"

namespace mcgr {

/// Channel-major image (C x H x W) with a tracked dynamic-range maximum.
class ImageArray {
 public:
  ImageArray() = default;
  ImageArray(int channels, int height, int width, double peak = 255.0, double fill = 0.0);
  ImageArray(int channels, int height, int width, std::vector<double> data, double peak = 255.0);

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  double peak() const { return peak_; }
  bool empty() const { return data_.empty(); }

  double& at(int c, int y, int x) { return data_[index(c, y, x)]; }
  double at(int c, int y, int x) const { return data_[index(c, y, x)]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  ImageArray crop(int top, int left, int height, int width) const;
  /// Largest centered crop whose sides are multiples of `multiple`.
  ImageArray center_crop_to_multiple(int multiple) const;
  ImageArray flipped(bool horizontal, bool vertical) const;
  /// Rounds and clamps every value to an integer in [0, peak].
  ImageArray quantized() const;

  bool operator==(const ImageArray& other) const = default;

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  double peak_ = 255.0;
  std::vector<double> data_;
};

/// Reads an 8- or 16-bit grayscale/RGB PNG (alpha is dropped).
ImageArray load_png(const std::filesystem::path& path);
/// Writes a lossless PNG; 8-bit when peak <= 255, otherwise 16-bit.
void save_png(const ImageArray& image, const std::filesystem::path& path);

/// Separable bicubic resampling, kernel parameter a = -0.5, half-pixel
/// centres, symmetric edge reflection. When shrinking, the kernel is widened
/// by the shrink factor (antialiasing). Constants are preserved exactly.
ImageArray resize_bicubic(const ImageArray& image, int out_height, int out_width);

/// The 1-D operator of resize_bicubic as a dense (out_size, in_size) matrix.
Tensor bicubic_matrix(int in_size, int out_size);

/// Bicubic downscale by 2 or 4. Height and width must be divisible by scale.
ImageArray synthesize_lr(const ImageArray& hr, int scale);

/// Luma (0.299 R + 0.587 G + 0.114 B) rescaled to [0, 255]; grayscale input is rescaled only.
ImageArray to_luma255(const ImageArray& image);

/// Pack images (all the same size) into a (B, C, H, W) tensor scaled to [0, 1].
Tensor to_tensor(const std::vector<const ImageArray*>& images);
Tensor to_tensor(const ImageArray& image);
/// Unpack batch item `b` of a [0, 1] tensor, clamped, at the given peak.
ImageArray from_tensor(const Tensor& t, std::int64_t b = 0, double peak = 255.0);

}  // namespace mcgr
