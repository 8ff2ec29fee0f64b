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

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vggtocc/diff.hpp"
#include "vggtocc/params.hpp"

namespace vggtocc::diff {

struct GradCheckResult {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::size_t entries = 0;
  // "<input>[<index>]" of the worst entry.
  std::string worst;
};

struct GradCheckOptions {
  double h = 1e-6;
  // Entries whose gradient is below floor_ratio * max|grad| are compared
  // against that floor instead of their own magnitude, so finite-difference
  // round-off on near-zero entries does not dominate the report.
  double floor_ratio = 1e-3;
  // 0 checks every entry; otherwise a deterministic stride subsample.
  std::size_t max_entries_per_input = 0;
};

using TensorFn = std::function<Var(Graph&, std::span<const Var>)>;
using ParamFn = std::function<Var(Graph&, ParamSet&)>;

// Compares reverse-mode gradients of a scalar function against central
// differences for every entry of `inputs`.
GradCheckResult grad_check(const TensorFn& fn, std::vector<Tensor> inputs,
                           const GradCheckOptions& opts = {});

// Same, over every trainable entry of `params`. The function must create its
// parameter leaves through Graph::param.
GradCheckResult grad_check(const ParamFn& fn, ParamSet& params,
                           const GradCheckOptions& opts = {});

}  // namespace vggtocc::diff
