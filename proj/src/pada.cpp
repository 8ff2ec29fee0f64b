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

#include "vggtocc/pada.hpp"

#include <algorithm>
#include <array>
#include <numeric>
#include <stdexcept>
#include <tuple>

namespace vggtocc::pada {

using diff::Graph;
using diff::Node;
using diff::ParamSet;

void PadaConfig::validate() const {
  if (n_heads < 1 || n_points < 1 || n_levels < 1 || query_dim < 1 ||
      feature_dim < 1) {
    throw std::invalid_argument("pada: all counts must be at least 1");
  }
  if (query_dim % n_heads != 0) {
    throw std::invalid_argument("pada: query_dim must be divisible by n_heads");
  }
  if (!(eps > 0.0)) throw std::invalid_argument("pada: eps must be positive");
}

std::vector<diff::ParamSpec> parameter_specs(const PadaConfig& cfg,
                                             const std::string& prefix) {
  cfg.validate();
  using Init = diff::ParamSpec::Init;
  const std::size_t c = cfg.query_dim;
  const std::size_t h = cfg.n_heads;
  const std::size_t s = cfg.samples_per_query();
  const std::size_t cf = cfg.feature_dim;
  const std::size_t ch = c / h;
  auto zeros = [&](const char* n, Shape sh) {
    return diff::ParamSpec{prefix + n, std::move(sh), Init::kZeros};
  };
  auto ones = [&](const char* n, Shape sh) {
    return diff::ParamSpec{prefix + n, std::move(sh), Init::kConstant, 1.0};
  };
  auto glorot = [&](const char* n, Shape sh, std::size_t fi, std::size_t fo) {
    return diff::ParamSpec{prefix + n, std::move(sh), Init::kGlorot, double(fi), double(fo)};
  };
  return {
      glorot("offset.w1", {c, c}, c, c),
      zeros("offset.b1", {c}),
      zeros("offset.w2", {c, 3 * s}),
      zeros("offset.b2", {3 * s}),
      glorot("attn.w", {c, s}, c, s),
      zeros("attn.b", {s}),
      {prefix + "bias_scale", {h * cfg.n_levels}, Init::kConstant, cfg.bias_scale_init},
      glorot("value.w", {h, cf, ch}, cf, ch),
      zeros("value.b", {c}),
      zeros("out.w", {c, c}),
      zeros("out.b", {c}),
      glorot("geo.w1", {6, c}, 6, c),
      zeros("geo.b1", {c}),
      ones("geo.ln_g", {c}),
      zeros("geo.ln_b", {c}),
      glorot("geo.w2", {c, c}, c, c),
      zeros("geo.b2", {c}),
      glorot("gate.w1", {2 * c, c}, 2 * c, c),
      zeros("gate.b1", {c}),
      ones("gate.ln_g", {c}),
      zeros("gate.ln_b", {c}),
      glorot("gate.w2", {c, c}, c, c),
      zeros("gate.b2", {c}),
      ones("norm.g", {c}),
      zeros("norm.b", {c}),
  };
}

void init_params(ParamSet& params, const std::string& prefix, const PadaConfig& cfg,
                 std::mt19937_64& rng) {
  diff::add_all(params, parameter_specs(cfg, prefix), rng);
}

PadaWeights bind(Graph& g, ParamSet& params, const std::string& prefix) {
  return bind_weights(
      [&](const std::string& name) { return g.param(params.get(name)); }, prefix);
}

PadaWeights bind_weights(const std::function<Var(const std::string&)>& get,
                         const std::string& prefix) {
  auto p = [&](const char* name) { return get(prefix + name); };
  PadaWeights w;
  w.offset_w1 = p("offset.w1");
  w.offset_b1 = p("offset.b1");
  w.offset_w2 = p("offset.w2");
  w.offset_b2 = p("offset.b2");
  w.attn_w = p("attn.w");
  w.attn_b = p("attn.b");
  w.bias_scale = p("bias_scale");
  w.value_w = p("value.w");
  w.value_b = p("value.b");
  w.out_w = p("out.w");
  w.out_b = p("out.b");
  w.geo_w1 = p("geo.w1");
  w.geo_b1 = p("geo.b1");
  w.geo_ln_g = p("geo.ln_g");
  w.geo_ln_b = p("geo.ln_b");
  w.geo_w2 = p("geo.w2");
  w.geo_b2 = p("geo.b2");
  w.gate_w1 = p("gate.w1");
  w.gate_b1 = p("gate.b1");
  w.gate_ln_g = p("gate.ln_g");
  w.gate_ln_b = p("gate.ln_b");
  w.gate_w2 = p("gate.w2");
  w.gate_b2 = p("gate.b2");
  w.norm_g = p("norm.g");
  w.norm_b = p("norm.b");
  return w;
}

Var predict_offsets(const Var& query, const PadaWeights& w, const PadaConfig& cfg,
                    double offset_range) {
  const std::size_t q = query.value().rows();
  const Var hidden = diff::silu(diff::linear(query, w.offset_w1, w.offset_b1));
  const Var raw = diff::linear(hidden, w.offset_w2, w.offset_b2);
  const Var bounded = diff::scale(diff::tanh(raw), offset_range);
  return diff::reshape(bounded, {q, cfg.n_heads, cfg.n_levels, cfg.n_points, 3});
}

SampleSet project_samples(Graph& g, const Tensor& ref_points, const Var& offsets,
                          const geometry::CameraModel& camera,
                          const PadaConfig& cfg) {
  if (ref_points.rank() != 2 || ref_points.dim(1) != 3) {
    throw ShapeError("project_samples: reference points must be [Q, 3]");
  }
  const std::size_t nq = ref_points.dim(0);
  const std::size_t per = cfg.samples_per_query();
  const std::size_t ns = nq * per;
  if (offsets && offsets.size() != ns * 3) {
    throw ShapeError("project_samples: offsets " + shape_str(offsets.shape()));
  }
  const Shape sample_shape{nq, cfg.n_heads, cfg.n_levels, cfg.n_points};
  Shape uv_shape = sample_shape;
  uv_shape.push_back(2);

  SampleSet out;
  Tensor uv(uv_shape);
  Tensor sigma(sample_shape);
  Tensor duv(Shape{ns, 6});      // world-frame Jacobian per sample
  Tensor dsigma(Shape{ns, 3});   // world-frame sigma_min gradient per sample
  out.valid.assign(ns, 0);
  out.active.assign(nq, 0);
  out.ref_jacobian = Tensor({nq, 6});

  for (std::size_t q = 0; q < nq; ++q) {
    const geometry::Vec3 ref(ref_points[3 * q], ref_points[3 * q + 1],
                             ref_points[3 * q + 2]);
    const geometry::Vec3 ref_cam = geometry::world_to_camera(ref, camera);
    const bool ref_front = ref_cam.z() > geometry::kZNear;
    if (ref_front) {
      const geometry::Jacobian jw = geometry::world_jacobian(ref_cam, camera);
      for (int r = 0; r < 2; ++r)
        for (int k = 0; k < 3; ++k) out.ref_jacobian[6 * q + 3 * r + k] = jw(r, k);
    }
    bool any_valid = false;
    for (std::size_t j = 0; j < per; ++j) {
      const std::size_t s = q * per + j;
      geometry::Vec3 p = ref;
      if (offsets) {
        for (int k = 0; k < 3; ++k) p(k) += offsets.value()[3 * s + k];
      }
      const geometry::Vec3 pc = geometry::world_to_camera(p, camera);
      const geometry::ProjectionResult r = geometry::project(pc, camera);
      if (pc.z() <= geometry::kZNear) continue;
      uv[2 * s] = r.u;
      uv[2 * s + 1] = r.v;
      sigma[s] = r.sigma_min;
      const geometry::Jacobian jw = r.jacobian * camera.rotation;
      for (int rr = 0; rr < 2; ++rr)
        for (int k = 0; k < 3; ++k) duv[6 * s + 3 * rr + k] = jw(rr, k);
      const geometry::Vec3 gs =
          camera.rotation.transpose() * geometry::sigma_min_gradient(pc, camera);
      for (int k = 0; k < 3; ++k) dsigma[3 * s + k] = gs(k);
      out.valid[s] = ref_front && r.valid;
      any_valid = any_valid || out.valid[s];
    }
    out.active[q] = ref_front && any_valid;
  }

  if (!offsets) {
    out.uv = g.constant(std::move(uv));
    out.sigma = g.constant(std::move(sigma));
    return out;
  }
  Node* on = offsets.node();
  const std::array<Var, 1> parents{offsets};
  out.uv = g.record(std::move(uv), parents, "project",
                    [on, duv, ns](const Tensor& grad) {
                      Tensor& go = on->ensure_grad();
                      for (std::size_t s = 0; s < ns; ++s) {
                        const double gu = grad[2 * s], gv = grad[2 * s + 1];
                        for (int k = 0; k < 3; ++k) {
                          go[3 * s + k] += gu * duv[6 * s + k] + gv * duv[6 * s + 3 + k];
                        }
                      }
                    });
  out.sigma = g.record(std::move(sigma), parents, "sigma_min",
                       [on, dsigma, ns](const Tensor& grad) {
                         Tensor& go = on->ensure_grad();
                         for (std::size_t s = 0; s < ns; ++s) {
                           for (int k = 0; k < 3; ++k) {
                             go[3 * s + k] += grad[s] * dsigma[3 * s + k];
                           }
                         }
                       });
  return out;
}

Var log_observability(const Var& sigma, const PadaConfig& cfg, bool detach) {
  const Var s = detach ? diff::detach(sigma) : sigma;
  return diff::log(diff::add_scalar(s, cfg.eps));
}

Var attention_weights(const Var& base_logits, const Var& log_obs,
                      const Var& bias_scale, std::span<const std::uint8_t> valid,
                      const PadaConfig& cfg) {
  const Shape shape = base_logits.shape();
  const std::size_t lk = cfg.n_levels * cfg.n_points;
  if (base_logits.size() % lk != 0) {
    throw ShapeError("attention_weights: logits " + shape_str(shape));
  }
  Var logits = base_logits;
  if (log_obs) {
    const Var bias = diff::mul_broadcast(log_obs, bias_scale, cfg.n_points);
    logits = diff::add(logits, diff::reshape(bias, shape));
  }
  logits = diff::masked_fill(logits, valid, kInvalidLogit);
  const Var flat = diff::reshape(logits, {base_logits.size() / lk, lk});
  return diff::reshape(diff::softmax(flat, 1), shape);
}

Var sample_values(std::span<const Var> levels, const Var& uv, const Var& weights,
                  const Var& value_w, const Var& value_b) {
  const Var aggregated = diff::deform_aggregate(levels, uv, weights);  // [Q, H, Cf]
  return diff::grouped_linear(aggregated, value_w, value_b);
}

Var view_gate(const Var& query, const Var& jacobian_flat, const PadaWeights& w,
              const PadaConfig& cfg) {
  const Var j = diff::scale(diff::detach(jacobian_flat), cfg.jacobian_input_scale);
  Var geo = diff::linear(j, w.geo_w1, w.geo_b1);
  geo = diff::relu(diff::layernorm(geo, w.geo_ln_g, w.geo_ln_b));
  geo = diff::linear(geo, w.geo_w2, w.geo_b2);
  Var gate = diff::linear(diff::concat_channels(query, geo), w.gate_w1, w.gate_b1);
  gate = diff::relu(diff::layernorm(gate, w.gate_ln_g, w.gate_ln_b));
  return diff::sigmoid(diff::linear(gate, w.gate_w2, w.gate_b2));
}

Var fuse_cameras(std::span<const Var> gammas, std::span<const Var> values) {
  if (gammas.empty() || gammas.size() != values.size()) {
    throw std::invalid_argument("fuse_cameras: need matching, non-empty inputs");
  }
  Var num = diff::mul(gammas[0], values[0]);
  Var den = gammas[0];
  for (std::size_t n = 1; n < gammas.size(); ++n) {
    num = diff::add(num, diff::mul(gammas[n], values[n]));
    den = diff::add(den, gammas[n]);
  }
  return diff::guarded_div(num, den);
}

std::vector<std::size_t> canonical_camera_order(std::span<const CameraView> views) {
  auto key = [&](std::size_t i) {
    const geometry::CameraModel& c = views[i].camera;
    std::array<double, 19> k{};
    for (int j = 0; j < 3; ++j) k[j] = c.translation(j);
    for (int j = 0; j < 9; ++j) k[3 + j] = c.rotation(j / 3, j % 3);
    k[12] = c.fx;
    k[13] = c.fy;
    k[14] = c.cx;
    k[15] = c.cy;
    k[16] = c.width;
    k[17] = c.height;
    k[18] = static_cast<double>(views[i].levels.size());
    return k;
  };
  std::vector<std::size_t> order(views.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
  return order;
}

Var pada_layer(const Var& query, const Tensor& ref_points,
               std::span<const CameraView> views, const PadaWeights& w,
               const PadaConfig& cfg, const PadaOptions& opts, PadaTrace* trace) {
  if (views.empty()) throw std::invalid_argument("pada_layer: no cameras");
  const std::size_t nq = query.value().rows();
  const std::size_t c = cfg.query_dim;
  if (query.value().last_dim() != c || ref_points.rank() != 2 ||
      ref_points.dim(0) != nq) {
    throw ShapeError("pada_layer: query " + shape_str(query.shape()) + " vs points " +
                     shape_str(ref_points.shape()));
  }
  Graph& g = query.graph();
  const Var offsets =
      opts.stages.stage1 ? predict_offsets(query, w, cfg, opts.offset_range) : Var{};
  const Var base = diff::reshape(diff::linear(query, w.attn_w, w.attn_b),
                                 {nq, cfg.n_heads, cfg.n_levels, cfg.n_points});
  if (trace) {
    *trace = PadaTrace{};
    trace->offsets = offsets;
  }

  std::vector<Var> gammas, values;
  for (std::size_t n : canonical_camera_order(views)) {
    const CameraView& view = views[n];
    if (view.levels.size() != cfg.n_levels) {
      throw ShapeError("pada_layer: camera pyramid depth mismatch");
    }
    SampleSet ss = project_samples(g, ref_points, offsets, view.camera, cfg);

    Var log_obs;
    std::vector<std::uint8_t> valid = ss.valid;
    ObservabilityCache* cache = opts.cache;
    const bool replay = cache && cache->cursor < cache->valid.size();
    if (replay) {
      valid = cache->valid[cache->cursor];
      if (opts.stages.stage2) log_obs = g.constant(cache->log_obs[cache->cursor]);
    } else if (opts.stages.stage2) {
      log_obs = log_observability(ss.sigma, cfg, opts.detach_observability);
    }
    if (cache) {
      if (!replay) {
        cache->valid.push_back(valid);
        cache->log_obs.push_back(log_obs ? log_obs.value() : Tensor{});
      }
      ++cache->cursor;
    }

    const Var weights = attention_weights(base, log_obs, w.bias_scale, valid, cfg);
    const Var v = sample_values(view.levels, ss.uv, weights, w.value_w, w.value_b);

    Tensor mask({nq, c});
    for (std::size_t q = 0; q < nq; ++q) {
      if (ss.active[q]) std::fill_n(mask.data() + q * c, c, 1.0);
    }
    Var gamma;
    if (opts.stages.stage3) {
      const Var gate = view_gate(query, g.constant(ss.ref_jacobian), w, cfg);
      gamma = diff::mul(gate, g.constant(std::move(mask)));
    } else {
      gamma = g.constant(std::move(mask));
    }
    gammas.push_back(gamma);
    values.push_back(v);
    if (trace) {
      trace->weights.push_back(weights);
      trace->gammas.push_back(gamma);
      trace->values.push_back(v);
      trace->samples.push_back(std::move(ss));
    }
  }

  const Var fused = fuse_cameras(gammas, values);
  if (trace) trace->fused = fused;
  const Var update = diff::linear(fused, w.out_w, w.out_b);
  return diff::layernorm(diff::add(query, update), w.norm_g, w.norm_b);
}

}  // namespace vggtocc::pada
