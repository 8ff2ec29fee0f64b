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

// Sequential three-scale occupancy head.
//
// A learnable embedding grid at the coarsest scale runs its block schedule,
// is patch-split into the next scale's queries, and so on. After the blocks
// of scales 1 and 2 the previous scale's output is blended in with
// coarse-computed, trilinearly upsampled gates. Every scale emits logits.
//
// Grids are stored as [X, Y, Z, C] row-major; the flat query index of voxel
// (x, y, z) is (x * Y + y) * Z + z.

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vggtocc/diff.hpp"
#include "vggtocc/pada.hpp"
#include "vggtocc/params.hpp"

namespace vggtocc::decoder {

using diff::Var;

enum class BlockKind { kCross, kConv };

// Fusion between consecutive scales. The U-Net decoder used as the cost
// baseline only exists in the FLOP model.
enum class FusionVariant { kNone, kDirectAdd, kScalarGate, kChannelGate, kChannelGateDw };

std::string_view to_string(FusionVariant v);
// Throws std::invalid_argument for unknown names.
FusionVariant parse_fusion(std::string_view name);
const std::vector<FusionVariant>& all_fusion_variants();

struct GridDims {
  std::size_t x = 1, y = 1, z = 1;
  std::size_t count() const { return x * y * z; }
  GridDims doubled() const { return {2 * x, 2 * y, 2 * z}; }
  bool operator==(const GridDims&) const = default;
};

struct ScaleSpec {
  GridDims dims;
  std::size_t channels = 64;
  std::vector<BlockKind> schedule;
};

struct HeadConfig {
  std::array<ScaleSpec, 3> scales;
  // World box covered by every scale, meters.
  std::array<double, 3> lower{-5.0, -5.0, 0.0};
  std::array<double, 3> upper{5.0, 5.0, 2.0};
  std::size_t n_classes = 5;
  // Heads, points, levels, feature width and bias settings; query_dim is
  // taken from each scale.
  pada::PadaConfig pada;
  std::size_t gate_hidden = 64;
  FusionVariant fusion = FusionVariant::kChannelGateDw;
  // Whether the scale-0 to scale-1 transition is fused as well.
  bool fuse_first_transition = true;
  // Offsets are bounded by this many voxel pitches of the current scale.
  double offset_pitches = 2.0;

  // 5x5x1 / 10x10x2 / 20x20x4 with 64 / 64 / 32 channels.
  static HeadConfig toy();
  // 50x50x4 / 100x100x8 / 200x200x16 with 256 / 256 / 64 channels.
  static HeadConfig full_scale();

  pada::PadaConfig pada_for(std::size_t scale) const;
  std::array<double, 3> pitch(std::size_t scale) const;
  void validate() const;
};

// Voxel centres of `scale`, [N, 3] in query order.
Tensor voxel_centers(const HeadConfig& cfg, std::size_t scale);

// Every parameter of the head in registration order.
std::vector<diff::ParamSpec> parameter_specs(const HeadConfig& cfg);
diff::ParamSet init_params(const HeadConfig& cfg, std::uint64_t seed);

// Binds parameters to a graph on first use.
class Binder {
 public:
  Binder(diff::Graph& g, diff::ParamSet& params) : g_(g), params_(params) {}
  Var operator()(const std::string& name);
  diff::Graph& graph() { return g_; }
  diff::ParamSet& params() { return params_; }

 private:
  diff::Graph& g_;
  diff::ParamSet& params_;
  std::map<std::string, Var, std::less<>> bound_;
};

// [X, Y, Z, C_in] -> [2X, 2Y, 2Z, C_out] via a per-voxel C_in -> 8 C_out map.
Var patch_split(const Var& grid, const Var& weight, const Var& bias);

// Depthwise 3x3x3 conv, layernorm, pointwise C -> 4C -> C with SiLU,
// residual add. Parameters under `prefix`.
Var conv_block(const Var& grid, Binder& bind, const std::string& prefix);

// Intermediate values of one fusion.
struct FusionTrace {
  Var gate;      // coarse resolution, [X, Y, Z, C] (or [.., 1] for scalar)
  Var fused;     // fine resolution before smoothing
  Var upsampled; // projected coarse features at fine resolution
};

// Blends the previous (coarse) scale into the current one. Parameters under
// `prefix`. Throws ShapeError unless h_prev is exactly half of h_curr.
Var coarse_gated_fuse(const Var& h_prev, const Var& h_curr, FusionVariant variant,
                      Binder& bind, const std::string& prefix,
                      FusionTrace* trace = nullptr);

struct CallCounters {
  std::array<std::size_t, 3> cross{};
  std::array<std::size_t, 3> conv{};
};

struct ForwardOptions {
  pada::StageToggles stages;
  bool detach_observability = true;
  pada::ObservabilityCache* cache = nullptr;
};

struct HeadOutput {
  std::array<Var, 3> logits;    // [X_s, Y_s, Z_s, n_classes]
  std::array<Var, 3> features;  // [X_s, Y_s, Z_s, C_s]
  std::array<FusionTrace, 2> fusions;  // transitions 0->1 and 1->2
  CallCounters calls;
};

HeadOutput head_forward(Binder& bind, const HeadConfig& cfg,
                        std::span<const pada::CameraView> views,
                        const ForwardOptions& opts = {});

}  // namespace vggtocc::decoder
