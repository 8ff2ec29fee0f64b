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

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vggtocc/tensor.hpp"

namespace vggtocc::diff {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kDivEps = 1e-8;

struct Param;

// One value in the operation graph. `backward` reads `grad` and accumulates
// into the parents it captured.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::function<void(const Tensor& grad_out)> backward;

  Tensor& ensure_grad();
};

class Graph;

class Var {
 public:
  Var() = default;
  Var(Graph* graph, Node* node) : graph_(graph), node_(node) {}

  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  // Gradient after Graph::backward; a zero tensor when nothing reached it.
  Tensor grad() const;

  Graph& graph() const { return *graph_; }
  Node* node() const { return node_; }
  explicit operator bool() const { return node_ != nullptr; }

 private:
  Graph* graph_ = nullptr;
  Node* node_ = nullptr;
};

// Owns nodes in creation order. Creation order is a valid topological order,
// so backward simply walks the node list in reverse.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var input(Tensor value, bool requires_grad = true);
  // Leaf bound to a parameter; see accumulate_param_grads.
  Var param(Param& p);

  // Adds a node whose value was computed by the caller. `backward` is kept
  // only when some parent requires a gradient.
  Var record(Tensor value, std::span<const Var> parents, const char* op,
             std::function<void(const Tensor&)> backward);

  // Seeds d(root)/d(root) = 1 and propagates. Root must hold one element.
  void backward(const Var& root);
  void zero_grad();

  // Adds the gradient of every bound parameter leaf into Param::grad.
  void accumulate_param_grads() const;
  // Parameter leaves in binding order.
  const std::vector<std::pair<Node*, Param*>>& bindings() const { return bindings_; }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  std::vector<std::unique_ptr<Node>> nodes_;
  std::vector<std::pair<Node*, Param*>> bindings_;
};

// Elementwise arithmetic; operands must share a shape.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
// a / max(b, eps); b receives no gradient where the guard is active.
Var guarded_div(const Var& a, const Var& b, double eps = kDivEps);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var one_minus(const Var& a);
Var log(const Var& a);
Var detach(const Var& a);
Var reshape(const Var& a, Shape shape);
Var sum(const Var& a);
Var mean(const Var& a);

enum class Activation { kRelu, kSilu, kSigmoid, kTanh };
Var activation(const Var& x, Activation kind);
inline Var relu(const Var& x) { return activation(x, Activation::kRelu); }
inline Var silu(const Var& x) { return activation(x, Activation::kSilu); }
inline Var sigmoid(const Var& x) { return activation(x, Activation::kSigmoid); }
inline Var tanh(const Var& x) { return activation(x, Activation::kTanh); }

// x[..., K] · weight[K, N] + bias[N]. Bias may be empty.
Var linear(const Var& x, const Var& weight, const Var& bias = {});

// Per-group weights: x[M, G, Cin], weight[G, Cin, Cout], bias[G, Cout] ->
// [M, G*Cout].
Var grouped_linear(const Var& x, const Var& weight, const Var& bias = {});

// Normalizes over the last axis; gamma/beta optional.
Var layernorm(const Var& x, const Var& gamma = {}, const Var& beta = {},
              double eps = kLayerNormEps);

Var softmax(const Var& x, std::size_t axis);

// Concatenates along the last axis; leading extents must match.
Var concat_channels(const Var& a, const Var& b);

// Views x as [outer, scales.size(), inner] and multiplies slice g by
// scales[g].
Var mul_broadcast(const Var& x, const Var& scales, std::size_t inner);

// x[..., 1] -> x[..., n] by replication.
Var expand_last(const Var& x, std::size_t n);

// Entries where mask == 0 are replaced by `fill` (and receive no gradient).
Var masked_fill(const Var& x, std::span<const std::uint8_t> mask, double fill);

// Bilinear interpolation on the pixel-centre grid of feature_map[H, W, C] at
// normalized uv[S, 2] (u along W, v along H). Coordinates are clamped to the
// border pixels.
Var bilinear_sample(const Var& feature_map, const Var& uv);

// Multi-level deformable aggregation. levels[l] is [H_l, W_l, C];
// uv is [Q, heads, L, K, 2]; weights is [Q, heads, L, K].
// Returns [Q, heads, C]: for each head the weighted sum of its samples.
Var deform_aggregate(std::span<const Var> levels, const Var& uv,
                     const Var& weights);

// Trilinear x2 upsampling of grid[X, Y, Z, C], half-pixel-centre convention.
Var trilinear_upsample2(const Var& grid);

// Depthwise 3x3x3 convolution with zero padding: grid[X, Y, Z, C],
// kernel[3, 3, 3, C], bias[C] optional.
Var dwconv3d(const Var& grid, const Var& kernel, const Var& bias = {});

// [X, Y, Z, 8*C] -> [2X, 2Y, 2Z, C]; channel block (dx*4 + dy*2 + dz) of a
// parent voxel becomes child (2x+dx, 2y+dy, 2z+dz).
Var split_children(const Var& grid);

}  // namespace vggtocc::diff
