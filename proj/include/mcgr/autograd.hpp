// Copyright 2026 The MCGR Authors
// SPDX-License-Identifier: Apache-2.0

// Reverse-mode automatic differentiation over Tensor values.
//
// Every backward rule is itself written in terms of differentiable ops, so
// `grad(..., create_graph = true)` yields gradients that can be
// differentiated again. This is what the critic gradient penalty needs.
// Rules for smooth pointwise nonlinearities (exp, sqrt, sigmoid, the fused
// cross-entropies) treat their local derivative as a constant and are exact
// to first order only; piecewise-linear rules (leaky rectifier, abs) are
// exact at every order almost everywhere.

#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "mcgr/tensor.hpp"

namespace mcgr::ag {

class Var;

/// Receives the upstream gradient and a mask of which inputs need a
/// gradient; returns one Var per input (undefined where not needed).
using BackwardFn = std::function<std::vector<Var>(const Var& grad_output, const std::vector<bool>& needed)>;

namespace detail {
struct Node {
  Tensor value;
  bool requires_grad = false;
  std::vector<Var> inputs;
  BackwardFn backward;
};
}  // namespace detail

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool is_leaf() const { return node_ && node_->inputs.empty(); }

  /// A new leaf holding a copy of this value, cut from the graph.
  Var detach() const { return Var(node_->value, false); }

  const detail::Node* node() const { return node_.get(); }

 private:
  friend Var make_result(Tensor, std::vector<Var>, BackwardFn);
  friend std::vector<Var> grad(const Var&, std::span<const Var>, bool);
  std::shared_ptr<detail::Node> node_;
};

bool grad_enabled();

/// Disables graph recording in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Wraps an op result; records `backward` only when recording is enabled
/// and some input requires a gradient.
Var make_result(Tensor value, std::vector<Var> inputs, BackwardFn backward);

/// Gradients of `output` (any shape; seeded with ones) with respect to each
/// of `inputs`. Unreachable inputs get a zero gradient.
std::vector<Var> grad(const Var& output, std::span<const Var> inputs, bool create_graph = false);

}  // namespace mcgr::ag
