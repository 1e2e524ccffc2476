// Copyright 2026 The MCGR Authors
// SPDX-License-Identifier: Apache-2.0

#include "mcgr/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "mcgr/error.hpp"

namespace mcgr {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (auto d : shape_) require(d >= 0, "negative tensor dimension");
  data_.assign(static_cast<std::size_t>(numel(shape_)), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  require(static_cast<std::int64_t>(data_.size()) == numel(shape_),
          "tensor data size does not match shape " + to_string(shape_));
}

double Tensor::item() const {
  require(data_.size() == 1, "item() on tensor with " + std::to_string(data_.size()) + " elements");
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  require(numel(shape) == size(), "cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool all_finite(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](double v) { return std::isfinite(v); });
}

}  // namespace mcgr
