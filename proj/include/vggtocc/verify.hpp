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

// Finite-difference gradient suite over every differentiable building block.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vggtocc::verify {

struct CheckRow {
  std::string group;  // "op", "layer", "head", "loss", "contract"
  std::string name;
  double error = 0.0;  // max relative error, or max abs difference for contracts
  double threshold = 0.0;
  std::size_t entries = 0;
  std::string worst;
  bool pass() const { return error < threshold; }
};

// One row per differentiable op.
std::vector<CheckRow> op_checks(std::uint64_t seed = 5);
// The full projection-aware cross-attention layer, every parameter.
CheckRow pada_layer_check(std::uint64_t seed = 16);
// A reduced head on a surround rig, strided parameter subsample.
CheckRow head_check(std::uint64_t seed = 10);
// The combined multi-scale objective with respect to all logits.
CheckRow total_loss_check(std::uint64_t seed = 6);

// Offset-head gradients with sigma_min detached versus sigma_min replaced by
// a constant. Also confirms the attached variant differs, so the comparison
// is not vacuous.
struct DetachReport {
  double live_vs_frozen = 0.0;
  double attached_vs_frozen = 0.0;
  double offset_grad_norm = 0.0;
  bool pass() const {
    return live_vs_frozen < 1e-12 && attached_vs_frozen > 1e-8 && offset_grad_norm > 0.0;
  }
};
DetachReport detach_contract(std::uint64_t seed = 16);

// Everything above; the detach contract becomes a "contract" row.
std::vector<CheckRow> gradient_suite();

std::string format_rows(const std::vector<CheckRow>& rows);

}  // namespace vggtocc::verify
