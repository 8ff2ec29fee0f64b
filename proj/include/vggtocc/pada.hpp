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

// Projection-aware deformable cross-attention from voxel queries to
// multi-camera feature pyramids.
//
// Per query and camera the layer
//   1. predicts 3D offsets around the query's reference point and projects
//      every shifted point into the camera (no 2D offsets anywhere),
//   2. biases the attention logits with s_{h,l} * log(sigma_min + eps), where
//      sigma_min of the projection Jacobian at the shifted point is detached,
//   3. fuses cameras with per-channel gates predicted from the query and the
//      reference-point Jacobian:  o = sum(gamma_n * v_n) / sum(gamma_n).
// The result is added to the query and layer-normalized.

#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vggtocc/diff.hpp"
#include "vggtocc/geometry.hpp"
#include "vggtocc/params.hpp"

namespace vggtocc::pada {

using diff::Var;

// Logit assigned to samples that cannot be observed.
inline constexpr double kInvalidLogit = -1e4;

struct PadaConfig {
  std::size_t n_heads = 4;
  std::size_t n_points = 4;
  std::size_t n_levels = 2;
  std::size_t query_dim = 64;
  std::size_t feature_dim = 32;
  double bias_scale_init = 0.1;
  double eps = 1e-5;
  double jacobian_input_scale = 1000.0;

  void validate() const;
  std::size_t samples_per_query() const { return n_heads * n_levels * n_points; }
};

// Stage 1 off: samples sit at the reference projection. Stage 2 off: no
// observability bias. Stage 3 off: plain average over observing cameras.
struct StageToggles {
  bool stage1 = true;
  bool stage2 = true;
  bool stage3 = true;
};

// One camera and its feature pyramid; levels[l] is [H_l, W_l, feature_dim].
struct CameraView {
  geometry::CameraModel camera;
  std::vector<Var> levels;
};

// Frozen per-camera observability for finite-difference checks: the first
// layer call records, later calls with the same cache replay.
struct ObservabilityCache {
  std::vector<Tensor> log_obs;
  std::vector<std::vector<std::uint8_t>> valid;
  std::size_t cursor = 0;
};

struct PadaOptions {
  StageToggles stages;
  // Offsets are tanh-bounded to [-offset_range, offset_range] meters.
  double offset_range = 1.0;
  // Only ever false in tests that demonstrate what the detach removes.
  bool detach_observability = true;
  ObservabilityCache* cache = nullptr;
};

// Graph leaves for one layer's parameters.
struct PadaWeights {
  Var offset_w1, offset_b1, offset_w2, offset_b2;
  Var attn_w, attn_b;
  Var bias_scale;
  Var value_w, value_b;
  Var out_w, out_b;
  Var geo_w1, geo_b1, geo_ln_g, geo_ln_b, geo_w2, geo_b2;
  Var gate_w1, gate_b1, gate_ln_g, gate_ln_b, gate_w2, gate_b2;
  Var norm_g, norm_b;
};

std::vector<diff::ParamSpec> parameter_specs(const PadaConfig& cfg,
                                             const std::string& prefix);
// Registers parameters under `prefix` (e.g. "s0.block0.cross."). The offset
// head's last layer and the output projection start at zero.
void init_params(diff::ParamSet& params, const std::string& prefix,
                 const PadaConfig& cfg, std::mt19937_64& rng);
PadaWeights bind(diff::Graph& g, diff::ParamSet& params, const std::string& prefix);
// Same, resolving full parameter names through `get`.
PadaWeights bind_weights(const std::function<Var(const std::string&)>& get,
                         const std::string& prefix);

// Projected samples of one camera for all queries.
struct SampleSet {
  Var uv;                             // [Q, H, L, K, 2] normalized
  Var sigma;                          // [Q, H, L, K] sigma_min at shifted points
  std::vector<std::uint8_t> valid;    // per sample
  // Per query: reference in front of the camera and at least one valid
  // sample. Cameras without it get a zero gate.
  std::vector<std::uint8_t> active;
  Tensor ref_jacobian;                // [Q, 6] world-frame J at the reference
};

// [Q, C] -> [Q, H, L, K, 3] offsets in meters.
Var predict_offsets(const Var& query, const PadaWeights& w, const PadaConfig& cfg,
                    double offset_range);

// Shifted points p_ref + offset projected into `camera`. `offsets` may be
// empty, meaning all offsets are zero.
SampleSet project_samples(diff::Graph& g, const Tensor& ref_points,
                          const Var& offsets, const geometry::CameraModel& camera,
                          const PadaConfig& cfg);

// softmax over levels x points per (query, head) of base logits plus the
// observability bias; invalid samples get kInvalidLogit.
Var attention_weights(const Var& base_logits, const Var& log_obs,
                      const Var& bias_scale, std::span<const std::uint8_t> valid,
                      const PadaConfig& cfg);

// log(sigma + eps), detached unless `detach` is false.
Var log_observability(const Var& sigma, const PadaConfig& cfg, bool detach);

// Weighted multi-level aggregation followed by the per-head value
// projection: [Q, C].
Var sample_values(std::span<const Var> levels, const Var& uv, const Var& weights,
                  const Var& value_w, const Var& value_b);

// Per-channel gate in (0, 1) from the query and the flattened Jacobian. No
// gradient flows into the Jacobian.
Var view_gate(const Var& query, const Var& jacobian_flat, const PadaWeights& w,
              const PadaConfig& cfg);

// sum(gamma_n * v_n) / max(sum(gamma_n), eps_div); zero when every gate is 0.
Var fuse_cameras(std::span<const Var> gammas, std::span<const Var> values);

// Intermediate values for inspection, in canonical camera order.
struct PadaTrace {
  std::vector<SampleSet> samples;
  std::vector<Var> weights;
  std::vector<Var> gammas;
  std::vector<Var> values;
  Var offsets;
  Var fused;
};

// Full layer. `ref_points` is [Q, 3] world coordinates of the query voxels.
Var pada_layer(const Var& query, const Tensor& ref_points,
               std::span<const CameraView> views, const PadaWeights& w,
               const PadaConfig& cfg, const PadaOptions& opts,
               PadaTrace* trace = nullptr);

// Order in which cameras are reduced; independent of the input order.
std::vector<std::size_t> canonical_camera_order(std::span<const CameraView> views);

}  // namespace vggtocc::pada
