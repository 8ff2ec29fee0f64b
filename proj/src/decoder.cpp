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

#include "vggtocc/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vggtocc::decoder {

using diff::ParamSpec;
using Init = diff::ParamSpec::Init;

namespace {

constexpr std::array<std::pair<FusionVariant, std::string_view>, 5> kFusionNames{{
    {FusionVariant::kNone, "none"},
    {FusionVariant::kDirectAdd, "direct_add"},
    {FusionVariant::kScalarGate, "scalar_gate"},
    {FusionVariant::kChannelGate, "channel_gate"},
    {FusionVariant::kChannelGateDw, "channel_gate_dw"},
}};

std::string scale_prefix(std::size_t s) { return "s" + std::to_string(s) + "."; }

std::string block_prefix(std::size_t s, std::size_t j, BlockKind kind) {
  return scale_prefix(s) + "b" + std::to_string(j) +
         (kind == BlockKind::kCross ? ".cross." : ".conv.");
}

bool transition_fused(const HeadConfig& cfg, std::size_t t) {
  return cfg.fusion != FusionVariant::kNone && (t == 1 || cfg.fuse_first_transition);
}

ParamSpec zeros(std::string n, Shape s) { return {std::move(n), std::move(s), Init::kZeros}; }
ParamSpec ones(std::string n, Shape s) {
  return {std::move(n), std::move(s), Init::kConstant, 1.0};
}
ParamSpec glorot(std::string n, Shape s, std::size_t fi, std::size_t fo) {
  return {std::move(n), std::move(s), Init::kGlorot, double(fi), double(fo)};
}

void conv_specs(std::vector<ParamSpec>& out, const std::string& p, std::size_t c) {
  out.push_back({p + "dw.k", {3, 3, 3, c}, Init::kUniform, 1.0 / std::sqrt(27.0)});
  out.push_back(zeros(p + "dw.b", {c}));
  out.push_back(ones(p + "ln.g", {c}));
  out.push_back(zeros(p + "ln.b", {c}));
  out.push_back(glorot(p + "mlp.w1", {c, 4 * c}, c, 4 * c));
  out.push_back(zeros(p + "mlp.b1", {4 * c}));
  out.push_back(zeros(p + "mlp.w2", {4 * c, c}));
  out.push_back(zeros(p + "mlp.b2", {c}));
}

void fusion_specs(std::vector<ParamSpec>& out, const std::string& p, FusionVariant v,
                  std::size_t cp, std::size_t c, std::size_t hidden) {
  if (v == FusionVariant::kNone) return;
  out.push_back(glorot(p + "proj.w", {cp, c}, cp, c));
  out.push_back(zeros(p + "proj.b", {c}));
  if (v == FusionVariant::kScalarGate) {
    out.push_back(glorot(p + "gate.w", {cp, 1}, cp, 1));
    out.push_back(zeros(p + "gate.b", {1}));
  } else if (v == FusionVariant::kChannelGate || v == FusionVariant::kChannelGateDw) {
    out.push_back(glorot(p + "gate.w1", {cp, hidden}, cp, hidden));
    out.push_back(zeros(p + "gate.b1", {hidden}));
    out.push_back(glorot(p + "gate.w2", {hidden, c}, hidden, c));
    out.push_back(zeros(p + "gate.b2", {c}));
  }
  if (v == FusionVariant::kChannelGateDw) {
    out.push_back({p + "dw.k", {3, 3, 3, c}, Init::kDeltaKernel});
    out.push_back(zeros(p + "dw.b", {c}));
    out.push_back(ones(p + "ln.g", {c}));
    out.push_back(zeros(p + "ln.b", {c}));
  }
}

Shape grid_shape(const GridDims& d, std::size_t c) { return {d.x, d.y, d.z, c}; }

}  // namespace

std::string_view to_string(FusionVariant v) {
  for (const auto& [k, name] : kFusionNames) {
    if (k == v) return name;
  }
  return "unknown";
}

FusionVariant parse_fusion(std::string_view name) {
  for (const auto& [k, n] : kFusionNames) {
    if (n == name) return k;
  }
  throw std::invalid_argument("unknown fusion variant '" + std::string(name) + "'");
}

const std::vector<FusionVariant>& all_fusion_variants() {
  static const std::vector<FusionVariant> v = [] {
    std::vector<FusionVariant> out;
    for (const auto& [k, n] : kFusionNames) out.push_back(k);
    return out;
  }();
  return v;
}

HeadConfig HeadConfig::toy() {
  HeadConfig cfg;
  using B = BlockKind;
  cfg.scales[0] = {{5, 5, 1}, 64, {B::kCross, B::kConv, B::kCross, B::kConv}};
  cfg.scales[1] = {{10, 10, 2}, 64, {B::kCross, B::kConv, B::kConv}};
  cfg.scales[2] = {{20, 20, 4}, 32, {B::kConv, B::kConv}};
  return cfg;
}

HeadConfig HeadConfig::full_scale() {
  HeadConfig cfg = toy();
  cfg.scales[0].dims = {50, 50, 4};
  cfg.scales[0].channels = 256;
  cfg.scales[1].dims = {100, 100, 8};
  cfg.scales[1].channels = 256;
  cfg.scales[2].dims = {200, 200, 16};
  cfg.scales[2].channels = 64;
  cfg.lower = {-50.0, -50.0, -5.0};
  cfg.upper = {50.0, 50.0, 3.0};
  cfg.n_classes = 17;
  cfg.pada.feature_dim = 1024;
  cfg.pada.n_levels = 4;
  return cfg;
}

pada::PadaConfig HeadConfig::pada_for(std::size_t scale) const {
  pada::PadaConfig p = pada;
  p.query_dim = scales.at(scale).channels;
  return p;
}

std::array<double, 3> HeadConfig::pitch(std::size_t scale) const {
  const GridDims& d = scales.at(scale).dims;
  return {(upper[0] - lower[0]) / double(d.x), (upper[1] - lower[1]) / double(d.y),
          (upper[2] - lower[2]) / double(d.z)};
}

void HeadConfig::validate() const {
  if (n_classes < 2) throw std::invalid_argument("head: need at least two classes");
  if (gate_hidden < 1) throw std::invalid_argument("head: gate_hidden must be >= 1");
  for (int a = 0; a < 3; ++a) {
    if (!(upper[a] > lower[a])) throw std::invalid_argument("head: empty world box");
  }
  for (std::size_t s = 0; s < 3; ++s) {
    const ScaleSpec& sc = scales[s];
    if (sc.dims.count() == 0 || sc.channels == 0) {
      throw std::invalid_argument("head: scale " + std::to_string(s) + " is empty");
    }
    if (s > 0 && !(sc.dims == scales[s - 1].dims.doubled())) {
      throw std::invalid_argument("head: scale " + std::to_string(s) +
                                  " must double every dimension of the previous one");
    }
    const bool has_cross =
        std::find(sc.schedule.begin(), sc.schedule.end(), BlockKind::kCross) !=
        sc.schedule.end();
    if (s == 2 && has_cross) {
      throw std::invalid_argument("head: the fine scale cannot hold cross blocks");
    }
    if (has_cross) pada_for(s).validate();
  }
}

Tensor voxel_centers(const HeadConfig& cfg, std::size_t scale) {
  const GridDims& d = cfg.scales.at(scale).dims;
  const auto p = cfg.pitch(scale);
  Tensor out({d.count(), 3});
  std::size_t i = 0;
  for (std::size_t x = 0; x < d.x; ++x)
    for (std::size_t y = 0; y < d.y; ++y)
      for (std::size_t z = 0; z < d.z; ++z, ++i) {
        out[3 * i] = cfg.lower[0] + (double(x) + 0.5) * p[0];
        out[3 * i + 1] = cfg.lower[1] + (double(y) + 0.5) * p[1];
        out[3 * i + 2] = cfg.lower[2] + (double(z) + 0.5) * p[2];
      }
  return out;
}

std::vector<ParamSpec> parameter_specs(const HeadConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpec> out;
  const std::size_t c0 = cfg.scales[0].channels;
  out.push_back({"s0.embed", {cfg.scales[0].dims.count(), c0}, Init::kUniform, 1.0});
  for (std::size_t s = 0; s < 3; ++s) {
    const std::size_t c = cfg.scales[s].channels;
    if (s > 0) {
      const std::size_t cp = cfg.scales[s - 1].channels;
      const std::string sp = "split" + std::to_string(s - 1) + ".";
      out.push_back(glorot(sp + "w", {cp, 8 * c}, cp, c));
      out.push_back(zeros(sp + "b", {8 * c}));
    }
    const auto& sched = cfg.scales[s].schedule;
    for (std::size_t j = 0; j < sched.size(); ++j) {
      const std::string p = block_prefix(s, j, sched[j]);
      if (sched[j] == BlockKind::kCross) {
        const auto ps = pada::parameter_specs(cfg.pada_for(s), p);
        out.insert(out.end(), ps.begin(), ps.end());
      } else {
        conv_specs(out, p, c);
      }
    }
    if (s > 0 && transition_fused(cfg, s - 1)) {
      fusion_specs(out, "fuse" + std::to_string(s - 1) + ".", cfg.fusion,
                   cfg.scales[s - 1].channels, c, cfg.gate_hidden);
    }
    const std::string cp = "cls" + std::to_string(s) + ".";
    out.push_back(glorot(cp + "w", {c, cfg.n_classes}, c, cfg.n_classes));
    out.push_back(zeros(cp + "b", {cfg.n_classes}));
  }
  return out;
}

diff::ParamSet init_params(const HeadConfig& cfg, std::uint64_t seed) {
  diff::ParamSet params;
  std::mt19937_64 rng(seed);
  diff::add_all(params, parameter_specs(cfg), rng);
  return params;
}

Var Binder::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  Var v = g_.param(params_.get(name));
  bound_.emplace(name, v);
  return v;
}

Var patch_split(const Var& grid, const Var& weight, const Var& bias) {
  if (grid.value().rank() != 4) {
    throw ShapeError("patch_split: grid must be [X, Y, Z, C], got " +
                     shape_str(grid.shape()));
  }
  return diff::split_children(diff::linear(grid, weight, bias));
}

Var conv_block(const Var& grid, Binder& bind, const std::string& prefix) {
  Var x = diff::dwconv3d(grid, bind(prefix + "dw.k"), bind(prefix + "dw.b"));
  x = diff::layernorm(x, bind(prefix + "ln.g"), bind(prefix + "ln.b"));
  x = diff::silu(diff::linear(x, bind(prefix + "mlp.w1"), bind(prefix + "mlp.b1")));
  x = diff::linear(x, bind(prefix + "mlp.w2"), bind(prefix + "mlp.b2"));
  return diff::add(grid, x);
}

Var coarse_gated_fuse(const Var& h_prev, const Var& h_curr, FusionVariant variant,
                      Binder& bind, const std::string& prefix, FusionTrace* trace) {
  const Shape& ps = h_prev.shape();
  const Shape& cs = h_curr.shape();
  if (ps.size() != 4 || cs.size() != 4 || cs[0] != 2 * ps[0] || cs[1] != 2 * ps[1] ||
      cs[2] != 2 * ps[2]) {
    throw ShapeError("coarse_gated_fuse: " + shape_str(ps) + " is not half of " +
                     shape_str(cs));
  }
  if (variant == FusionVariant::kNone) return h_curr;
  const std::size_t c = cs[3];
  const Var proj = diff::linear(h_prev, bind(prefix + "proj.w"), bind(prefix + "proj.b"));
  const Var up = diff::trilinear_upsample2(proj);
  if (trace) trace->upsampled = up;
  if (variant == FusionVariant::kDirectAdd) {
    const Var fused = diff::add(h_curr, up);
    if (trace) trace->fused = fused;
    return fused;
  }
  Var gate, gate_up;
  if (variant == FusionVariant::kScalarGate) {
    gate = diff::sigmoid(diff::linear(h_prev, bind(prefix + "gate.w"), bind(prefix + "gate.b")));
    gate_up = diff::expand_last(diff::trilinear_upsample2(gate), c);
  } else {
    const Var hidden = diff::silu(
        diff::linear(h_prev, bind(prefix + "gate.w1"), bind(prefix + "gate.b1")));
    gate = diff::sigmoid(
        diff::linear(hidden, bind(prefix + "gate.w2"), bind(prefix + "gate.b2")));
    gate_up = diff::trilinear_upsample2(gate);
  }
  const Var fused =
      diff::add(diff::mul(gate_up, up), diff::mul(diff::one_minus(gate_up), h_curr));
  if (trace) {
    trace->gate = gate;
    trace->fused = fused;
  }
  if (variant != FusionVariant::kChannelGateDw) return fused;
  const Var smooth = diff::dwconv3d(fused, bind(prefix + "dw.k"), bind(prefix + "dw.b"));
  return diff::layernorm(smooth, bind(prefix + "ln.g"), bind(prefix + "ln.b"));
}

HeadOutput head_forward(Binder& bind, const HeadConfig& cfg,
                        std::span<const pada::CameraView> views,
                        const ForwardOptions& opts) {
  HeadOutput out;
  Var grid;
  for (std::size_t s = 0; s < 3; ++s) {
    const ScaleSpec& sc = cfg.scales[s];
    const std::size_t c = sc.channels;
    const Shape shape = grid_shape(sc.dims, c);
    if (s == 0) {
      grid = diff::reshape(bind("s0.embed"), shape);
    } else {
      const std::string sp = "split" + std::to_string(s - 1) + ".";
      grid = patch_split(grid, bind(sp + "w"), bind(sp + "b"));
    }
    Tensor centers;
    for (std::size_t j = 0; j < sc.schedule.size(); ++j) {
      const std::string p = block_prefix(s, j, sc.schedule[j]);
      if (sc.schedule[j] == BlockKind::kConv) {
        grid = conv_block(grid, bind, p);
        ++out.calls.conv[s];
        continue;
      }
      if (views.empty()) throw std::invalid_argument("head_forward: no cameras");
      if (centers.size() == 0) centers = voxel_centers(cfg, s);
      const pada::PadaConfig pc = cfg.pada_for(s);
      const pada::PadaWeights w =
          pada::bind_weights([&](const std::string& n) { return bind(n); }, p);
      pada::PadaOptions po;
      po.stages = opts.stages;
      po.offset_range = cfg.offset_pitches * cfg.pitch(s)[0];
      po.detach_observability = opts.detach_observability;
      po.cache = opts.cache;
      const Var flat = diff::reshape(grid, {sc.dims.count(), c});
      grid = diff::reshape(pada::pada_layer(flat, centers, views, w, pc, po), shape);
      ++out.calls.cross[s];
    }
    if (s > 0 && transition_fused(cfg, s - 1)) {
      grid = coarse_gated_fuse(out.features[s - 1], grid, cfg.fusion, bind,
                               "fuse" + std::to_string(s - 1) + ".", &out.fusions[s - 1]);
    }
    out.features[s] = grid;
    const std::string cp = "cls" + std::to_string(s) + ".";
    out.logits[s] = diff::linear(grid, bind(cp + "w"), bind(cp + "b"));
  }
  return out;
}

}  // namespace vggtocc::decoder
