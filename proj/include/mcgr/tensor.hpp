// Copyright 2026 The MCGR Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace mcgr {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major array of doubles. Rank 0 (empty shape) holds one scalar.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value) { return Tensor(Shape{}, value); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::int64_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* raw() { return data_.data(); }
  const double* raw() const { return data_.data(); }

  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // Rank-4 (batch, channel, row, col) accessors.
  double& at(std::int64_t b, std::int64_t c, std::int64_t y, std::int64_t x) {
    return data_[static_cast<std::size_t>(((b * shape_[1] + c) * shape_[2] + y) * shape_[3] + x)];
  }
  double at(std::int64_t b, std::int64_t c, std::int64_t y, std::int64_t x) const {
    return data_[static_cast<std::size_t>(((b * shape_[1] + c) * shape_[2] + y) * shape_[3] + x)];
  }

  double item() const;
  Tensor reshaped(Shape shape) const;
  void fill(double value);

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

bool all_finite(const Tensor& t);

}  // namespace mcgr
