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

// Analytical cost model.
//
// Convention: one multiply-accumulate is two FLOPs, every bias add is one
// FLOP, and activations, normalizations, softmax, elementwise blends and
// trilinear upsampling are free.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vggtocc/decoder.hpp"
#include "vggtocc/pada.hpp"
#include "vggtocc/params.hpp"

namespace vggtocc::flops {

inline constexpr std::string_view kConvention =
    "1 MAC = 2 FLOPs; bias adds counted; activations, normalizations, "
    "elementwise blends and trilinear upsampling counted as 0";

// Rigid transform (9 MACs, 3 adds) and perspective divide (2).
inline constexpr std::uint64_t kProjectFlops = 23;
// Jacobian entries (6), 2x2 Gram matrix (6 MACs) and its closed-form
// smaller eigenvalue with square root (6).
inline constexpr std::uint64_t kSigmaFlops = 24;
// Four-corner bilinear interpolation per channel.
inline constexpr std::uint64_t kBilinearMacs = 8;

struct FlopItem {
  std::string name;
  std::uint64_t flops = 0;
};

struct FlopReport {
  std::string title;
  std::vector<FlopItem> items;
  std::vector<std::string> notes;

  std::uint64_t total() const;
  std::uint64_t item(std::string_view name) const;  // 0 when absent
};

// Dense layer over `rows` inputs.
std::uint64_t linear_flops(std::uint64_t rows, std::uint64_t in, std::uint64_t out,
                           bool bias = true);

enum class Variant { kUnet, kNone, kDirectAdd, kScalarGate, kChannelGate, kChannelGateDw };

std::string_view to_string(Variant v);
// Accepts "unet" and every decoder fusion name; throws std::invalid_argument.
Variant parse_variant(std::string_view name);
const std::vector<Variant>& all_variants();
Variant from_fusion(decoder::FusionVariant v);

struct FusionDims {
  std::uint64_t coarse_voxels = 100 * 100 * 8;
  std::uint64_t fine_voxels = 200 * 200 * 16;
  std::uint64_t coarse_channels = 256;
  std::uint64_t fine_channels = 64;
  std::uint64_t gate_hidden = 64;
};

// Transition `t` (0: scale 0 to 1, 1: scale 1 to 2) of a head configuration.
FusionDims fusion_dims(const decoder::HeadConfig& cfg, std::size_t transition);

FlopReport count_fusion_variant(Variant v, const FusionDims& dims = {});

// Reference figures for the fusion variants, GFLOPs; none for unknown rows.
std::optional<double> reference_gflops(Variant v);

struct PadaCost {
  std::uint64_t n_queries = 1;
  std::uint64_t n_cameras = 1;
};

// One PA-DA layer. Every item except the output projection scales with the
// number of cameras or vanishes without them.
FlopReport count_pada_layer(const pada::PadaConfig& cfg, const PadaCost& cost);

struct ParameterReport {
  std::vector<std::pair<std::string, std::uint64_t>> modules;
  std::uint64_t total = 0;
  std::uint64_t trainable = 0;
};

// Groups parameters by module: "s<i>.b<j>.<kind>", "s<i>.embed", "split<i>",
// "fuse<i>" and "cls<i>".
ParameterReport report_parameters(const diff::ParamSet& params);
ParameterReport report_parameters(const std::vector<diff::ParamSpec>& specs);

std::string format_table(const FlopReport& r);
std::string format_json(const std::vector<FlopReport>& reports);
std::string format_parameters(const ParameterReport& r);

}  // namespace vggtocc::flops
