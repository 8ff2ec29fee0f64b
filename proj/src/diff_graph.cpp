// Copyright 2026 The vggtocc Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <stdexcept>

#include "vggtocc/diff.hpp"
#include "vggtocc/params.hpp"

namespace vggtocc::diff {

Tensor& Node::ensure_grad() {
  if (grad.size() != value.size() || grad.shape() != value.shape()) {
    grad = Tensor(value.shape(), 0.0);
  }
  return grad;
}

Tensor Var::grad() const {
  if (node_->grad.size() == node_->value.size() && node_->value.size() > 0 &&
      node_->grad.shape() == node_->value.shape()) {
    return node_->grad;
  }
  return Tensor(node_->value.shape(), 0.0);
}

Var Graph::constant(Tensor value) { return input(std::move(value), false); }

Var Graph::input(Tensor value, bool requires_grad) {
  auto node = std::make_unique<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.back().get());
}

Var Graph::param(Param& p) {
  Var v = input(p.value, p.trainable);
  v.node()->op = "param";
  bindings_.emplace_back(v.node(), &p);
  return v;
}

Var Graph::record(Tensor value, std::span<const Var> parents, const char* op,
                  std::function<void(const Tensor&)> backward) {
  auto node = std::make_unique<Node>();
  node->value = std::move(value);
  node->op = op;
  for (const Var& p : parents) {
    if (p && p.requires_grad()) {
      node->requires_grad = true;
      break;
    }
  }
  if (node->requires_grad) node->backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.back().get());
}

void Graph::backward(const Var& root) {
  if (root.size() != 1) {
    throw ShapeError("backward root must be a scalar, got shape " +
                     shape_str(root.shape()));
  }
  root.node()->ensure_grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = **it;
    if (!n.backward || n.grad.size() != n.value.size() || n.value.size() == 0) {
      continue;
    }
    n.backward(n.grad);
  }
}

void Graph::zero_grad() {
  for (auto& n : nodes_) {
    if (n->grad.size() > 0) n->grad.fill(0.0);
  }
}

void Graph::accumulate_param_grads() const {
  for (const auto& [node, param] : bindings_) {
    if (!param->trainable || node->grad.size() != node->value.size()) continue;
    if (param->grad.shape() != param->value.shape()) {
      param->grad = Tensor(param->value.shape(), 0.0);
    }
    for (std::size_t i = 0; i < node->grad.size(); ++i) {
      param->grad[i] += node->grad[i];
    }
  }
}

}  // namespace vggtocc::diff
