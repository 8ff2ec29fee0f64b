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

#include "vggtocc/params.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vggtocc::diff {

Param& ParamSet::add(std::string name, Tensor init) {
  if (find(name) != nullptr) {
    throw std::invalid_argument("duplicate parameter '" + name + "'");
  }
  auto p = std::make_unique<Param>();
  p->name = std::move(name);
  p->grad = Tensor(init.shape(), 0.0);
  p->value = std::move(init);
  items_.push_back(std::move(p));
  return *items_.back();
}

Param* ParamSet::find(std::string_view name) {
  for (auto& p : items_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

const Param* ParamSet::find(std::string_view name) const {
  for (const auto& p : items_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

Param& ParamSet::get(std::string_view name) {
  Param* p = find(name);
  if (p == nullptr) {
    throw std::out_of_range("unknown parameter '" + std::string(name) + "'");
  }
  return *p;
}

const Param& ParamSet::get(std::string_view name) const {
  const Param* p = find(name);
  if (p == nullptr) {
    throw std::out_of_range("unknown parameter '" + std::string(name) + "'");
  }
  return *p;
}

void ParamSet::zero_grad() {
  for (auto& p : items_) p->grad.fill(0.0);
}

void ParamSet::set_trainable(std::string_view prefix, bool trainable) {
  for (auto& p : items_) {
    if (std::string_view(p->name).starts_with(prefix)) p->trainable = trainable;
  }
}

std::size_t ParamSet::total_count() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p->value.size();
  return n;
}

std::size_t ParamSet::trainable_count() const { return trainable_count(""); }

std::size_t ParamSet::trainable_count(std::string_view prefix) const {
  std::size_t n = 0;
  for (const auto& p : items_) {
    if (p->trainable && std::string_view(p->name).starts_with(prefix)) {
      n += p->value.size();
    }
  }
  return n;
}

Tensor glorot(Shape shape, std::size_t fan_in, std::size_t fan_out,
              std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return uniform(std::move(shape), -a, a, rng);
}

Tensor uniform(Shape shape, double lo, double hi, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  // Explicit mapping keeps streams identical across standard libraries.
  for (double& v : t.vec()) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    v = lo + (hi - lo) * u;
  }
  return t;
}

Tensor materialize(const ParamSpec& spec, std::mt19937_64& rng) {
  using Init = ParamSpec::Init;
  switch (spec.init) {
    case Init::kZeros:
      return Tensor(spec.shape);
    case Init::kConstant:
      return Tensor(spec.shape, spec.a);
    case Init::kGlorot:
      return glorot(spec.shape, static_cast<std::size_t>(spec.a),
                    static_cast<std::size_t>(spec.b), rng);
    case Init::kUniform:
      return uniform(spec.shape, -spec.a, spec.a, rng);
    case Init::kDeltaKernel: {
      if (spec.shape.size() != 4 || spec.shape[0] != 3 || spec.shape[1] != 3 ||
          spec.shape[2] != 3) {
        throw ShapeError("delta kernel must be [3, 3, 3, C]: " + spec.name);
      }
      Tensor t(spec.shape);
      const std::size_t c = spec.shape[3];
      std::fill_n(t.data() + 13 * c, c, 1.0);
      return t;
    }
  }
  throw std::logic_error("unknown init rule");
}

void add_all(ParamSet& params, const std::vector<ParamSpec>& specs,
             std::mt19937_64& rng) {
  for (const ParamSpec& s : specs) params.add(s.name, materialize(s, rng));
}

}  // namespace vggtocc::diff
