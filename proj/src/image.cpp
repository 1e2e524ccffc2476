// Copyright 2026 The MCGR Authors
// SPDX-License-Identifier: Apache-2.0

#include "mcgr/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "mcgr/error.hpp"

namespace mcgr {

ImageArray::ImageArray(int channels, int height, int width, double peak, double fill)
    : channels_(channels), height_(height), width_(width), peak_(peak) {
  require(channels == 1 || channels == 3, "image must have 1 or 3 channels");
  require(height >= 1 && width >= 1, "image dimensions must be positive");
  require(peak > 0, "image peak must be positive");
  data_.assign(static_cast<std::size_t>(channels) * height * width, fill);
}

ImageArray::ImageArray(int channels, int height, int width, std::vector<double> data, double peak)
    : ImageArray(channels, height, width, peak) {
  require(data.size() == data_.size(), "image data size does not match dimensions");
  data_ = std::move(data);
}

ImageArray ImageArray::crop(int top, int left, int height, int width) const {
  require(top >= 0 && left >= 0 && height >= 1 && width >= 1 && top + height <= height_ && left + width <= width_,
          "crop window outside the image");
  ImageArray out(channels_, height, width, peak_);
  for (int c = 0; c < channels_; ++c)
    for (int y = 0; y < height; ++y)
      std::copy_n(&data_[index(c, top + y, left)], width, &out.data_[out.index(c, y, 0)]);
  return out;
}

ImageArray ImageArray::center_crop_to_multiple(int multiple) const {
  require(multiple >= 1, "crop multiple must be positive");
  const int h = height_ / multiple * multiple;
  const int w = width_ / multiple * multiple;
  require(h >= 1 && w >= 1, "image smaller than the crop multiple");
  return crop((height_ - h) / 2, (width_ - w) / 2, h, w);
}

ImageArray ImageArray::flipped(bool horizontal, bool vertical) const {
  ImageArray out(channels_, height_, width_, peak_);
  for (int c = 0; c < channels_; ++c)
    for (int y = 0; y < height_; ++y)
      for (int x = 0; x < width_; ++x)
        out.at(c, vertical ? height_ - 1 - y : y, horizontal ? width_ - 1 - x : x) = at(c, y, x);
  return out;
}

ImageArray ImageArray::quantized() const {
  ImageArray out = *this;
  for (double& v : out.data_) v = std::clamp(std::round(v), 0.0, peak_);
  return out;
}

namespace {

struct PngImage {
  png_image image{};
  PngImage() {
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
  }
  ~PngImage() { png_image_free(&image); }
};

}  // namespace

ImageArray load_png(const std::filesystem::path& path) {
  PngImage png;
  if (!png_image_begin_read_from_file(&png.image, path.c_str()))
    throw IoError("cannot read PNG " + path.string() + ": " + png.image.message);
  const bool color = (png.image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  const bool wide = (png.image.format & PNG_FORMAT_FLAG_LINEAR) != 0;
  // The simplified API only yields 16-bit output in linear mode; read
  // 16-bit files as linear and keep the stored values untouched.
  png.image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (wide) png.image.format |= PNG_FORMAT_FLAG_LINEAR;
  const int channels = color ? 3 : 1;
  const int width = static_cast<int>(png.image.width);
  const int height = static_cast<int>(png.image.height);
  std::vector<unsigned char> buffer(PNG_IMAGE_SIZE(png.image));
  if (!png_image_finish_read(&png.image, nullptr, buffer.data(), 0, nullptr))
    throw IoError("cannot decode PNG " + path.string() + ": " + png.image.message);
  ImageArray out(channels, height, width, wide ? 65535.0 : 255.0);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < channels; ++c) {
        const std::size_t i = (static_cast<std::size_t>(y) * width + x) * channels + c;
        out.at(c, y, x) = wide ? reinterpret_cast<const std::uint16_t*>(buffer.data())[i] : buffer[i];
      }
  return out;
}

void save_png(const ImageArray& image, const std::filesystem::path& path) {
  require(!image.empty(), "cannot save an empty image");
  const bool wide = image.peak() > 255.0;
  PngImage png;
  png.image.width = static_cast<png_uint_32>(image.width());
  png.image.height = static_cast<png_uint_32>(image.height());
  png.image.format = image.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (wide) png.image.format |= PNG_FORMAT_FLAG_LINEAR;
  const int channels = image.channels();
  const std::size_t count = static_cast<std::size_t>(image.width()) * image.height() * channels;
  std::vector<std::uint16_t> wide_buf;
  std::vector<unsigned char> narrow_buf;
  if (wide) wide_buf.resize(count); else narrow_buf.resize(count);
  const double limit = wide ? 65535.0 : 255.0;
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x)
      for (int c = 0; c < channels; ++c) {
        const std::size_t i = (static_cast<std::size_t>(y) * image.width() + x) * channels + c;
        const double v = std::clamp(std::round(image.at(c, y, x)), 0.0, limit);
        if (wide) wide_buf[i] = static_cast<std::uint16_t>(v); else narrow_buf[i] = static_cast<unsigned char>(v);
      }
  const void* buffer = wide ? static_cast<const void*>(wide_buf.data()) : narrow_buf.data();
  if (!png_image_write_to_file(&png.image, path.c_str(), 0, buffer, 0, nullptr))
    throw IoError("cannot write PNG " + path.string() + ": " + png.image.message);
}

namespace {

double cubic(double x) {
  constexpr double a = -0.5;
  x = std::fabs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

int reflect(int i, int n) {
  // symmetric: -1 -> 0, n -> n-1
  const int period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

struct Taps {
  std::vector<std::vector<std::pair<int, double>>> per_output;
};

Taps resample_taps(int in_size, int out_size) {
  const double scale = static_cast<double>(out_size) / in_size;
  const double support = scale < 1.0 ? 2.0 / scale : 2.0;
  const double squeeze = scale < 1.0 ? scale : 1.0;
  Taps taps;
  taps.per_output.resize(static_cast<std::size_t>(out_size));
  for (int o = 0; o < out_size; ++o) {
    const double centre = (o + 0.5) / scale - 0.5;
    const int first = static_cast<int>(std::floor(centre - support));
    const int last = static_cast<int>(std::ceil(centre + support));
    auto& list = taps.per_output[static_cast<std::size_t>(o)];
    double total = 0.0;
    for (int i = first; i <= last; ++i) {
      const double w = squeeze * cubic(squeeze * (centre - i));
      if (w == 0.0) continue;
      list.emplace_back(reflect(i, in_size), w);
      total += w;
    }
    for (auto& [idx, w] : list) w /= total;
  }
  return taps;
}

}  // namespace

ImageArray resize_bicubic(const ImageArray& image, int out_height, int out_width) {
  require(!image.empty(), "resize of an empty image");
  require(out_height >= 1 && out_width >= 1, "resize target must be positive");
  const Taps rows = resample_taps(image.height(), out_height);
  const Taps cols = resample_taps(image.width(), out_width);
  ImageArray horizontal(image.channels(), image.height(), out_width, image.peak());
  for (int c = 0; c < image.channels(); ++c)
    for (int y = 0; y < image.height(); ++y)
      for (int x = 0; x < out_width; ++x) {
        double acc = 0.0;
        for (const auto& [i, w] : cols.per_output[static_cast<std::size_t>(x)]) acc += w * image.at(c, y, i);
        horizontal.at(c, y, x) = acc;
      }
  ImageArray out(image.channels(), out_height, out_width, image.peak());
  for (int c = 0; c < image.channels(); ++c)
    for (int y = 0; y < out_height; ++y)
      for (int x = 0; x < out_width; ++x) {
        double acc = 0.0;
        for (const auto& [i, w] : rows.per_output[static_cast<std::size_t>(y)]) acc += w * horizontal.at(c, i, x);
        out.at(c, y, x) = acc;
      }
  return out;
}

Tensor bicubic_matrix(int in_size, int out_size) {
  require(in_size >= 1 && out_size >= 1, "resample sizes must be positive");
  Tensor m({out_size, in_size});
  const Taps taps = resample_taps(in_size, out_size);
  for (int o = 0; o < out_size; ++o)
    for (const auto& [i, w] : taps.per_output[static_cast<std::size_t>(o)]) m[static_cast<std::int64_t>(o) * in_size + i] += w;
  return m;
}

ImageArray synthesize_lr(const ImageArray& hr, int scale) {
  require(scale == 2 || scale == 4, "scale must be 2 or 4, got " + std::to_string(scale));
  require(hr.height() % scale == 0 && hr.width() % scale == 0,
          "image " + std::to_string(hr.width()) + "x" + std::to_string(hr.height()) + " not divisible by scale " +
              std::to_string(scale));
  return resize_bicubic(hr, hr.height() / scale, hr.width() / scale);
}

ImageArray to_luma255(const ImageArray& image) {
  const double rescale = 255.0 / image.peak();
  ImageArray out(1, image.height(), image.width(), 255.0);
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x) {
      const double v = image.channels() == 3
                           ? 0.299 * image.at(0, y, x) + 0.587 * image.at(1, y, x) + 0.114 * image.at(2, y, x)
                           : image.at(0, y, x);
      out.at(0, y, x) = v * rescale;
    }
  return out;
}

Tensor to_tensor(const std::vector<const ImageArray*>& images) {
  require(!images.empty(), "to_tensor: no images");
  const ImageArray& first = *images.front();
  const std::int64_t plane = static_cast<std::int64_t>(first.data().size());
  Tensor out({static_cast<std::int64_t>(images.size()), first.channels(), first.height(), first.width()});
  for (std::size_t b = 0; b < images.size(); ++b) {
    const ImageArray& img = *images[b];
    require(img.channels() == first.channels() && img.height() == first.height() && img.width() == first.width(),
            "to_tensor: images differ in size");
    const double inv = 1.0 / img.peak();
    for (std::int64_t i = 0; i < plane; ++i)
      out[static_cast<std::int64_t>(b) * plane + i] = img.data()[static_cast<std::size_t>(i)] * inv;
  }
  return out;
}

Tensor to_tensor(const ImageArray& image) { return to_tensor(std::vector<const ImageArray*>{&image}); }

ImageArray from_tensor(const Tensor& t, std::int64_t b, double peak) {
  require(t.rank() == 4 && b >= 0 && b < t.dim(0), "from_tensor: expected (B, C, H, W) and a valid batch index");
  ImageArray out(static_cast<int>(t.dim(1)), static_cast<int>(t.dim(2)), static_cast<int>(t.dim(3)), peak);
  const std::int64_t plane = static_cast<std::int64_t>(out.data().size());
  for (std::int64_t i = 0; i < plane; ++i)
    out.data()[static_cast<std::size_t>(i)] = std::clamp(t[b * plane + i], 0.0, 1.0) * peak;
  return out;
}

}  // namespace mcgr
