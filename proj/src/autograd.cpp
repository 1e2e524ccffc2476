// Copyright 2026 The MCGR Authors
// SPDX-License-Identifier: Apache-2.0

#include "mcgr/autograd.hpp"

#include <algorithm>
#include <optional>
#include <unordered_map>
#include <unordered_set>

#include "mcgr/error.hpp"
#include "mcgr/ops.hpp"

namespace mcgr::ag {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Var make_result(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Var out(std::move(value), false);
  if (!g_grad_enabled) return out;
  bool any = std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.requires_grad(); });
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->inputs = std::move(inputs);
  out.node_->backward = std::move(backward);
  return out;
}

std::vector<Var> grad(const Var& output, std::span<const Var> inputs, bool create_graph) {
  using detail::Node;
  std::vector<Var> result;
  result.reserve(inputs.size());
  std::unordered_set<const Node*> targets;
  for (const auto& in : inputs) {
    require(in.defined(), "grad() with an undefined input");
    targets.insert(in.node());
  }

  // Post-order DFS; `leads` marks nodes from which some target is reachable.
  std::vector<Node*> order;
  std::unordered_map<const Node*, bool> leads;
  if (output.requires_grad()) {
    struct Frame {
      Node* node;
      std::size_t next;
    };
    std::vector<Frame> stack{{output.node_.get(), 0}};
    leads[output.node()] = false;
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next < f.node->inputs.size()) {
        const Var& in = f.node->inputs[f.next++];
        if (in.requires_grad() && !leads.contains(in.node())) {
          leads[in.node()] = false;
          stack.push_back({in.node_.get(), 0});
        }
        continue;
      }
      bool reach = targets.contains(f.node);
      for (const auto& in : f.node->inputs)
        if (in.requires_grad() && leads[in.node()]) reach = true;
      leads[f.node] = reach;
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  std::optional<NoGradGuard> guard;
  if (!create_graph) guard.emplace();

  std::unordered_map<const Node*, Var> grads;
  if (output.requires_grad()) grads[output.node()] = Var(Tensor(output.shape(), 1.0));

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (!leads[node] || !node->backward) continue;
    auto g = grads.find(node);
    if (g == grads.end()) continue;
    std::vector<bool> needed(node->inputs.size());
    for (std::size_t i = 0; i < needed.size(); ++i) {
      const Var& in = node->inputs[i];
      needed[i] = in.requires_grad() && leads[in.node()];
    }
    Var upstream = g->second;
    if (!targets.contains(node)) grads.erase(g);
    auto parts = node->backward(upstream, needed);
    for (std::size_t i = 0; i < needed.size(); ++i) {
      if (!needed[i] || !parts[i].defined()) continue;
      const Node* key = node->inputs[i].node();
      auto [slot, inserted] = grads.try_emplace(key, parts[i]);
      if (!inserted) slot->second = add(slot->second, parts[i]);
    }
  }

  for (const auto& in : inputs) {
    auto g = grads.find(in.node());
    result.push_back(g != grads.end() ? g->second : Var(Tensor(in.shape(), 0.0)));
  }
  return result;
}

}  // namespace mcgr::ag
