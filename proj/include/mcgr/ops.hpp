// Copyright 2026 The MCGR Authors
// SPDX-License-Identifier: Apache-2.0

// Differentiable operations on ag::Var. Feature maps are rank-4
// (batch, channels, height, width). No implicit broadcasting: every op
// states the shapes it accepts and throws ContractError otherwise.

#pragma once

#include <cstdint>
#include <vector>

#include "mcgr/autograd.hpp"

namespace mcgr::ag {

// Elementwise, equal shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double value);
Var mul_const(const Var& a, const Tensor& factor);
Var add_const(const Var& a, const Tensor& offset);

Var square(const Var& a);
Var abs(const Var& a);
Var sqrt(const Var& a);
Var exp(const Var& a);
Var sigmoid(const Var& a);
Var leaky_relu(const Var& a, double slope);

// Reductions to a rank-0 scalar and their adjoints.
Var sum(const Var& a);
Var mean(const Var& a);
Var expand(const Var& scalar, const Shape& shape);

// Per-sample reduction over all non-leading axes: (B, ...) -> (B).
Var sum_per_sample(const Var& a);
Var expand_per_sample(const Var& per_sample, const Shape& shape);

Var reshape(const Var& a, const Shape& shape);

struct ConvGeometry {
  int stride = 1;
  int pad = 0;
};

std::int64_t conv_output_size(std::int64_t in, std::int64_t kernel, const ConvGeometry& geom);

/// Cross-correlation of x (B, Ci, H, W) with weight (Co, Ci, k, k).
Var conv2d(const Var& x, const Var& weight, ConvGeometry geom);
/// Adjoint of conv2d in x: maps an output-shaped gradient back to x's shape.
Var conv2d_input_grad(const Var& grad_out, const Var& weight, const Shape& input_shape, ConvGeometry geom);
/// Adjoint of conv2d in the weight.
Var conv2d_weight_grad(const Var& x, const Var& grad_out, const Shape& weight_shape, ConvGeometry geom);

/// x (B, C, H, W) + bias (C) broadcast over batch and space.
Var add_channel_bias(const Var& x, const Var& bias);
Var channel_sum(const Var& x);
Var channel_broadcast(const Var& bias, const Shape& shape);

/// Per-channel separable linear map: out[b, c] = rows * x[b, c] * cols^T,
/// rows (H_out, H_in), cols (W_out, W_in).
Var separable_linear(const Var& x, const Tensor& rows, const Tensor& cols);
/// (B, C*s*s, H, W) -> (B, C, s*H, s*W); out(b,c,s*i+di,s*j+dj) = in(b, c*s*s + di*s + dj, i, j).

Var pixel_shuffle(const Var& x, int factor);
Var pixel_unshuffle(const Var& x, int factor);

Var concat_channels(const std::vector<Var>& parts);
Var slice_channels(const Var& x, std::int64_t begin, std::int64_t count);
Var pad_channels(const Var& x, std::int64_t begin, std::int64_t total);

/// (B, C, H, W) -> (B, C, 1, 1) summed over space, and its adjoint.
Var spatial_sum(const Var& x);
Var spatial_expand(const Var& x, std::int64_t height, std::int64_t width);
Var spatial_mean(const Var& x);

/// Flat gather of the given element indices into a rank-1 result.
Var gather(const Var& x, const std::vector<std::int64_t>& indices);
Var scatter(const Var& values, const std::vector<std::int64_t>& indices, const Shape& shape);

/// sum_i weight_i * BCE(sigmoid(logit_i), target_i), numerically stable.
Var bce_with_logits_sum(const Var& logits, const Tensor& targets, const Tensor& weights);
/// Sum over rows of cross-entropy(softmax(logits row), label); logits (K, n).
Var softmax_cross_entropy_sum(const Var& logits, const std::vector<int>& labels);

}  // namespace mcgr::ag
