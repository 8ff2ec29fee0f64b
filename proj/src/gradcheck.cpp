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

#include "vggtocc/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace vggtocc::diff {

namespace {

struct Entry {
  std::string label;
  double analytic;
  double numeric;
};

GradCheckResult summarize(const std::vector<Entry>& entries, double floor_ratio) {
  GradCheckResult r;
  double scale = 0.0;
  for (const Entry& e : entries) {
    scale = std::max({scale, std::abs(e.analytic), std::abs(e.numeric)});
  }
  const double floor = std::max(floor_ratio * scale, 1e-12);
  for (const Entry& e : entries) {
    const double abs_err = std::abs(e.analytic - e.numeric);
    const double denom =
        std::max({std::abs(e.analytic), std::abs(e.numeric), floor});
    const double rel = abs_err / denom;
    r.max_abs_err = std::max(r.max_abs_err, abs_err);
    if (rel > r.max_rel_err || r.worst.empty()) {
      r.worst = e.label;
      r.max_rel_err = rel;
    }
  }
  r.entries = entries.size();
  return r;
}

std::vector<std::size_t> pick(std::size_t n, std::size_t limit) {
  std::vector<std::size_t> idx;
  if (limit == 0 || n <= limit) {
    for (std::size_t i = 0; i < n; ++i) idx.push_back(i);
    return idx;
  }
  const double stride = static_cast<double>(n) / static_cast<double>(limit);
  for (std::size_t j = 0; j < limit; ++j) {
    idx.push_back(static_cast<std::size_t>(static_cast<double>(j) * stride));
  }
  return idx;
}

}  // namespace

GradCheckResult grad_check(const TensorFn& fn, std::vector<Tensor> inputs,
                           const GradCheckOptions& opts) {
  auto evaluate = [&](bool with_grad, std::vector<Tensor>* grads) {
    Graph g;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const Tensor& t : inputs) vars.push_back(g.input(t, with_grad));
    Var out = fn(g, vars);
    if (with_grad) {
      g.backward(out);
      for (const Var& v : vars) grads->push_back(v.grad());
    }
    return out.value()[0];
  };
  std::vector<Tensor> grads;
  evaluate(true, &grads);
  std::vector<Entry> entries;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    for (std::size_t i : pick(inputs[t].size(), opts.max_entries_per_input)) {
      const double orig = inputs[t][i];
      inputs[t][i] = orig + opts.h;
      const double fp = evaluate(false, nullptr);
      inputs[t][i] = orig - opts.h;
      const double fm = evaluate(false, nullptr);
      inputs[t][i] = orig;
      entries.push_back({"input" + std::to_string(t) + "[" + std::to_string(i) + "]",
                         grads[t][i], (fp - fm) / (2 * opts.h)});
    }
  }
  return summarize(entries, opts.floor_ratio);
}

GradCheckResult grad_check(const ParamFn& fn, ParamSet& params,
                           const GradCheckOptions& opts) {
  params.zero_grad();
  {
    Graph g;
    Var out = fn(g, params);
    g.backward(out);
    g.accumulate_param_grads();
  }
  auto evaluate = [&]() {
    Graph g;
    return fn(g, params).value()[0];
  };
  std::vector<Entry> entries;
  for (auto& p : params.items()) {
    if (!p->trainable) continue;
    for (std::size_t i : pick(p->value.size(), opts.max_entries_per_input)) {
      const double orig = p->value[i];
      p->value[i] = orig + opts.h;
      const double fp = evaluate();
      p->value[i] = orig - opts.h;
      const double fm = evaluate();
      p->value[i] = orig;
      entries.push_back({p->name + "[" + std::to_string(i) + "]", p->grad[i],
                         (fp - fm) / (2 * opts.h)});
    }
  }
  return summarize(entries, opts.floor_ratio);
}

}  // namespace vggtocc::diff
