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

#include "vggtocc/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "vggtocc/decoder.hpp"
#include "vggtocc/gradcheck.hpp"
#include "vggtocc/objective.hpp"
#include "vggtocc/pada.hpp"
#include "vggtocc/synth.hpp"

namespace vggtocc::verify {
namespace {

using diff::Graph;
using diff::Var;
using diff::ParamSet;
using diff::TensorFn;
using Ins = std::span<const Var>;

// Scalar probe of a tensor: sum(y * w) with a fixed random w.
Var contract(const Var& y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  return diff::sum(diff::mul(y, y.graph().constant(diff::uniform(y.shape(), -1.0, 1.0, rng))));
}

CheckRow row(std::string group, std::string name, const diff::GradCheckResult& r,
             double threshold) {
  return {std::move(group), std::move(name), r.max_rel_err, threshold, r.entries, r.worst};
}

std::vector<geometry::CameraModel> small_rig() {
  synth::RigSpec rig;
  rig.width = 12;
  rig.height_px = 8;
  rig.levels = {{8, 12}, {4, 6}};
  rig.feature_dim = 4;
  return synth::make_rig(rig);
}

std::vector<Tensor> random_maps(std::size_t n_cams, std::size_t cf, std::mt19937_64& rng) {
  std::vector<Tensor> maps;
  for (std::size_t n = 0; n < n_cams; ++n) {
    maps.push_back(diff::uniform({8, 12, cf}, -1.0, 1.0, rng));
    maps.push_back(diff::uniform({4, 6, cf}, -1.0, 1.0, rng));
  }
  return maps;
}

std::vector<pada::CameraView> bind_views(Graph& g, const std::vector<geometry::CameraModel>& cams,
                                         const std::vector<Tensor>& maps) {
  std::vector<pada::CameraView> views;
  for (std::size_t n = 0; n < cams.size(); ++n) {
    views.push_back({cams[n], {g.constant(maps[2 * n]), g.constant(maps[2 * n + 1])}});
  }
  return views;
}

void perturb(ParamSet& ps, std::mt19937_64& rng, double amp) {
  std::uniform_real_distribution<double> d(-amp, amp);
  for (auto& p : ps.items())
    for (double& v : p->value.vec()) v += d(rng);
}

// Small layer on three rig cameras with queries spread around the rig.
struct LayerFixture {
  pada::PadaConfig cfg;
  ParamSet params;
  std::vector<geometry::CameraModel> cams;
  std::vector<Tensor> maps;
  Tensor query, target, points;

  explicit LayerFixture(std::uint64_t seed) {
    cfg.n_heads = 2;
    cfg.n_levels = 2;
    cfg.n_points = 2;
    cfg.query_dim = 8;
    cfg.feature_dim = 4;
    std::mt19937_64 rng(seed);
    pada::init_params(params, "", cfg, rng);
    perturb(params, rng, 0.3);
    const auto rig = small_rig();
    cams = {rig[0], rig[1], rig[3]};
    maps = random_maps(cams.size(), cfg.feature_dim, rng);
    query = diff::uniform({4, 8}, -2.0, 2.0, rng);
    target = diff::uniform({4, 8}, -1.0, 1.0, rng);
    points = Tensor::from({4, 3}, {3.0, 0.2, 0.4, 2.5, 1.6, 0.1, -2.0, 0.9, 1.3, 3.2, -0.5, 0.0});
  }

  Var loss(Graph& g, ParamSet& ps, const pada::PadaOptions& opts) {
    const auto views = bind_views(g, cams, maps);
    const Var out = pada::pada_layer(g.constant(query), points, views, pada::bind(g, ps, ""),
                                     cfg, opts);
    return diff::sum(diff::mul(out, g.constant(target)));
  }

  std::vector<double> offset_grads(const pada::PadaOptions& opts) {
    Graph g;
    params.zero_grad();
    g.backward(loss(g, params, opts));
    g.accumulate_param_grads();
    std::vector<double> all;
    for (const char* n : {"offset.w1", "offset.b1", "offset.w2", "offset.b2"}) {
      const auto& gr = params.get(n).grad.vec();
      all.insert(all.end(), gr.begin(), gr.end());
    }
    params.zero_grad();
    return all;
  }
};

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

std::vector<CheckRow> op_checks(std::uint64_t seed) {
  using namespace diff;
  std::mt19937_64 rng(seed);
  auto R = [&](Shape s, double lo = -1, double hi = 1) { return uniform(std::move(s), lo, hi, rng); };
  struct Case {
    const char* name;
    TensorFn fn;
    std::vector<Tensor> inputs;
  };
  std::vector<Case> cases = {
      {"add", [](Graph&, Ins in) { return contract(add(in[0], in[1])); }, {R({3, 4}), R({3, 4})}},
      {"sub", [](Graph&, Ins in) { return contract(sub(in[0], in[1])); }, {R({3, 4}), R({3, 4})}},
      {"mul", [](Graph&, Ins in) { return contract(mul(in[0], in[1])); }, {R({3, 4}), R({3, 4})}},
      {"div", [](Graph&, Ins in) { return contract(div(in[0], in[1])); }, {R({3, 4}), R({3, 4}, 0.5, 2)}},
      {"guarded_div", [](Graph&, Ins in) { return contract(guarded_div(in[0], in[1])); },
       {R({3, 4}), R({3, 4}, 0.5, 2)}},
      {"scale", [](Graph&, Ins in) { return contract(scale(in[0], -1.7)); }, {R({6})}},
      {"add_scalar", [](Graph&, Ins in) { return contract(add_scalar(in[0], 0.3)); }, {R({6})}},
      {"one_minus", [](Graph&, Ins in) { return contract(one_minus(in[0])); }, {R({6})}},
      {"log", [](Graph&, Ins in) { return contract(log(in[0])); }, {R({6}, 0.2, 3)}},
      {"reshape", [](Graph&, Ins in) { return contract(reshape(in[0], {4, 3})); }, {R({3, 4})}},
      {"sum", [](Graph&, Ins in) { return sum(mul(in[0], in[0])); }, {R({3, 4})}},
      {"mean", [](Graph&, Ins in) { return mean(mul(in[0], in[0])); }, {R({3, 4})}},
      {"relu", [](Graph&, Ins in) { return contract(relu(in[0])); }, {R({20})}},
      {"silu", [](Graph&, Ins in) { return contract(silu(in[0])); }, {R({20}, -3, 3)}},
      {"sigmoid", [](Graph&, Ins in) { return contract(sigmoid(in[0])); }, {R({20}, -3, 3)}},
      {"tanh", [](Graph&, Ins in) { return contract(tanh(in[0])); }, {R({20}, -3, 3)}},
      {"linear", [](Graph&, Ins in) { return contract(linear(in[0], in[1], in[2])); },
       {R({2, 3, 4}), R({4, 5}), R({5})}},
      {"grouped_linear", [](Graph&, Ins in) { return contract(grouped_linear(in[0], in[1], in[2])); },
       {R({3, 2, 4}), R({2, 4, 3}), R({6})}},
      {"layernorm", [](Graph&, Ins in) { return contract(layernorm(in[0], in[1], in[2])); },
       {R({4, 6}), R({6}), R({6})}},
      {"softmax", [](Graph&, Ins in) { return contract(softmax(in[0], 1)); }, {R({3, 4, 2}, -2, 2)}},
      {"concat_channels", [](Graph&, Ins in) { return contract(concat_channels(in[0], in[1])); },
       {R({2, 3, 2}), R({2, 3, 4})}},
      {"mul_broadcast", [](Graph&, Ins in) { return contract(mul_broadcast(in[0], in[1], 3)); },
       {R({2, 4, 3}), R({4})}},
      {"expand_last", [](Graph&, Ins in) { return contract(expand_last(in[0], 5)); }, {R({3, 1})}},
      {"masked_fill",
       [](Graph&, Ins in) {
         const std::uint8_t mask[6] = {1, 0, 1, 1, 0, 1};
         return contract(masked_fill(in[0], mask, -3.0));
       },
       {R({6})}},
      {"bilinear_sample", [](Graph&, Ins in) { return contract(bilinear_sample(in[0], in[1])); },
       {R({5, 4, 3}), R({7, 2}, 0.05, 0.95)}},
      {"deform_aggregate",
       [](Graph&, Ins in) {
         const Var levels[2] = {in[0], in[1]};
         return contract(deform_aggregate(levels, in[2], in[3]));
       },
       {R({5, 6, 3}), R({3, 4, 3}), R({2, 2, 2, 3, 2}, 0.05, 0.95), R({2, 2, 2, 3})}},
      {"trilinear_upsample2", [](Graph&, Ins in) { return contract(trilinear_upsample2(in[0])); },
       {R({2, 3, 2, 2})}},
      {"dwconv3d", [](Graph&, Ins in) { return contract(dwconv3d(in[0], in[1], in[2])); },
       {R({3, 3, 2, 2}), R({3, 3, 3, 2}), R({2})}},
      {"split_children", [](Graph&, Ins in) { return contract(split_children(in[0])); },
       {R({2, 1, 1, 16})}},
      {"patch_split",
       [](Graph&, Ins in) { return contract(decoder::patch_split(in[0], in[1], in[2])); },
       {R({2, 2, 1, 4}), R({4, 24}), R({24})}},
  };
  std::vector<CheckRow> rows;
  for (auto& c : cases) rows.push_back(row("op", c.name, grad_check(c.fn, c.inputs), 1e-5));
  return rows;
}

CheckRow pada_layer_check(std::uint64_t seed) {
  LayerFixture fx(seed);
  pada::ObservabilityCache cache;
  pada::PadaOptions opts;
  opts.offset_range = 0.6;
  opts.cache = &cache;
  const auto r = diff::grad_check(
      [&](Graph& g, ParamSet& ps) {
        cache.cursor = 0;
        return fx.loss(g, ps, opts);
      },
      fx.params);
  return row("layer", "pada_layer", r, 1e-5);
}

CheckRow head_check(std::uint64_t seed) {
  decoder::HeadConfig cfg = decoder::HeadConfig::toy();
  cfg.scales[0].dims = {4, 4, 1};
  cfg.scales[1].dims = {8, 8, 2};
  cfg.scales[2].dims = {16, 16, 4};
  cfg.scales[0].channels = 8;
  cfg.scales[1].channels = 8;
  cfg.scales[2].channels = 4;
  cfg.pada.n_heads = 2;
  cfg.pada.n_points = 2;
  cfg.pada.feature_dim = 4;
  cfg.gate_hidden = 4;
  cfg.n_classes = 3;
  ParamSet ps = decoder::init_params(cfg, seed);
  std::mt19937_64 rng(seed);
  perturb(ps, rng, 0.2);
  const auto cams = small_rig();
  const auto maps = random_maps(cams.size(), cfg.pada.feature_dim, rng);
  std::array<Tensor, 3> targets;
  for (std::size_t s = 0; s < 3; ++s) {
    const auto& d = cfg.scales[s].dims;
    targets[s] = diff::uniform({d.x, d.y, d.z, cfg.n_classes}, -1.0, 1.0, rng);
  }
  pada::ObservabilityCache cache;
  decoder::ForwardOptions opts;
  opts.cache = &cache;
  diff::GradCheckOptions gopts;
  gopts.max_entries_per_input = 6;
  const auto r = diff::grad_check(
      [&](Graph& g, ParamSet& p) {
        cache.cursor = 0;
        decoder::Binder bind(g, p);
        const auto views = bind_views(g, cams, maps);
        const auto out = decoder::head_forward(bind, cfg, views, opts);
        Var loss = diff::sum(diff::mul(out.logits[0], g.constant(targets[0])));
        for (std::size_t s = 1; s < 3; ++s)
          loss = diff::add(loss, diff::sum(diff::mul(out.logits[s], g.constant(targets[s]))));
        return loss;
      },
      ps, gopts);
  return row("head", "head_forward", r, 1e-4);
}

CheckRow total_loss_check(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t k = 4;
  objective::LabelGrid fine{{4, 4, 4}, objective::Labels(64)};
  std::uniform_int_distribution<int> cls(0, static_cast<int>(k) - 1);
  for (auto& v : fine.data) v = static_cast<std::uint8_t>(cls(rng));
  const auto labels = objective::label_pyramid(fine, k);
  std::vector<Tensor> z;
  for (const auto& l : labels) {
    z.push_back(diff::uniform({l.dims.x, l.dims.y, l.dims.z, k}, -2.0, 2.0, rng));
  }
  objective::LossConfig cfg;
  cfg.class_weights = {0.5, 1.0, 1.5, 1.0};
  const auto r = diff::grad_check(
      [&](Graph&, Ins in) { return objective::total_loss(in, labels, cfg).total_var; }, z);
  return row("loss", "total_loss", r, 1e-4);
}

DetachReport detach_contract(std::uint64_t seed) {
  LayerFixture fx(seed);
  pada::PadaOptions live;
  live.offset_range = 0.6;
  const auto detached = fx.offset_grads(live);

  pada::ObservabilityCache cache;
  pada::PadaOptions frozen = live;
  frozen.cache = &cache;
  fx.offset_grads(frozen);
  cache.cursor = 0;
  const auto constant = fx.offset_grads(frozen);

  pada::PadaOptions attached = live;
  attached.detach_observability = false;
  const auto through = fx.offset_grads(attached);

  DetachReport r;
  r.live_vs_frozen = max_diff(detached, constant);
  r.attached_vs_frozen = max_diff(through, constant);
  for (double v : detached) r.offset_grad_norm += v * v;
  r.offset_grad_norm = std::sqrt(r.offset_grad_norm);
  return r;
}

std::vector<CheckRow> gradient_suite() {
  std::vector<CheckRow> rows = op_checks();
  rows.push_back(pada_layer_check());
  rows.push_back(head_check());
  rows.push_back(total_loss_check());
  const DetachReport d = detach_contract();
  CheckRow c{"contract", "detach_sigma_min", d.live_vs_frozen, 1e-12, 0, ""};
  // A vacuous comparison fails the row.
  if (!d.pass()) c.error = std::max(c.error, 1.0);
  rows.push_back(c);
  return rows;
}

std::string format_rows(const std::vector<CheckRow>& rows) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-9s %-20s %12s %10s %8s  %s\n", "group", "check", "max_err",
                "threshold", "entries", "result");
  os << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-9s %-20s %12.3e %10.0e %8zu  %s\n", r.group.c_str(),
                  r.name.c_str(), r.error, r.threshold, r.entries, r.pass() ? "PASS" : "FAIL");
    os << buf;
  }
  return os.str();
}

}  // namespace vggtocc::verify
