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
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "vggtocc/tensor.hpp"

namespace vggtocc::diff {

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
};

// Insertion-ordered named parameters with stable addresses.
class ParamSet {
 public:
  Param& add(std::string name, Tensor init);
  Param& get(std::string_view name);
  const Param& get(std::string_view name) const;
  Param* find(std::string_view name);
  const Param* find(std::string_view name) const;

  std::vector<std::unique_ptr<Param>>& items() { return items_; }
  const std::vector<std::unique_ptr<Param>>& items() const { return items_; }

  void zero_grad();
  // Sets `trainable` on every parameter whose name starts with `prefix`.
  void set_trainable(std::string_view prefix, bool trainable);

  std::size_t total_count() const;
  std::size_t trainable_count() const;
  // Trainable entries under `prefix`.
  std::size_t trainable_count(std::string_view prefix) const;

 private:
  std::vector<std::unique_ptr<Param>> items_;
};

// Glorot-uniform weight for a fan_in -> fan_out map.
Tensor glorot(Shape shape, std::size_t fan_in, std::size_t fan_out,
              std::mt19937_64& rng);
Tensor uniform(Shape shape, double lo, double hi, std::mt19937_64& rng);

// Declarative parameter: name, shape and initialization rule.
struct ParamSpec {
  enum class Init { kZeros, kConstant, kGlorot, kUniform, kDeltaKernel };
  std::string name;
  Shape shape;
  Init init = Init::kZeros;
  // kConstant: a = value. kGlorot: a = fan_in, b = fan_out.
  // kUniform: [-a, a]. kDeltaKernel: 3x3x3xC kernel with centre taps 1.
  double a = 0.0;
  double b = 0.0;

  std::size_t count() const { return shape_numel(shape); }
};

Tensor materialize(const ParamSpec& spec, std::mt19937_64& rng);
// Materializes every spec in order, drawing from `rng` sequentially.
void add_all(ParamSet& params, const std::vector<ParamSpec>& specs, std::mt19937_64& rng);

}  // namespace vggtocc::diff
