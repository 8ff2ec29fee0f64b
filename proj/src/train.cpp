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

#include "vggtocc/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <thread>
#include <unordered_map>

namespace vggtocc::train {
namespace {

// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index writes
// only its own slot, so results do not depend on scheduling.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(std::max<std::size_t>(threads, 1), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

decoder::ForwardOptions forward_options(const pada::StageToggles& stages) {
  decoder::ForwardOptions o;
  o.stages = stages;
  return o;
}

}  // namespace

void OptimConfig::validate() const {
  if (!(lr > 0.0) || !(min_lr > 0.0) || min_lr > lr) {
    throw std::invalid_argument("optim: need 0 < min_lr <= lr");
  }
  if (weight_decay < 0.0) throw std::invalid_argument("optim: weight_decay must be >= 0");
  if (batch_size == 0) throw std::invalid_argument("optim: batch_size must be >= 1");
  if (!(clip_norm > 0.0)) throw std::invalid_argument("optim: clip_norm must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && eps > 0.0)) {
    throw std::invalid_argument("optim: bad Adam constants");
  }
}

double learning_rate(const OptimConfig& cfg, std::size_t step) {
  if (step < cfg.warmup) {
    return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup);
  }
  const std::size_t span = cfg.steps > cfg.warmup + 1 ? cfg.steps - cfg.warmup - 1 : 1;
  const double p = std::min(1.0, static_cast<double>(step - cfg.warmup) / double(span));
  return cfg.min_lr + 0.5 * (cfg.lr - cfg.min_lr) * (1.0 + std::cos(std::numbers::pi * p));
}

double clip_grad_norm(diff::ParamSet& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params.items()) {
    if (!p->trainable) continue;
    for (double g : p->grad.vec()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& p : params.items()) {
      if (p->trainable) {
        for (double& g : p->grad.vec()) g *= s;
      }
    }
  }
  return norm;
}

AdamW::AdamW(const diff::ParamSet& params, const OptimConfig& cfg) : cfg_(cfg) {
  for (const auto& p : params.items()) {
    m_.emplace_back(p->value.shape(), 0.0);
    v_.emplace_back(p->value.shape(), 0.0);
  }
}

void AdamW::step(diff::ParamSet& params, double lr) {
  if (params.items().size() != m_.size()) throw std::logic_error("adamw: parameter set changed");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
  for (std::size_t k = 0; k < m_.size(); ++k) {
    diff::Param& p = *params.items()[k];
    if (!p.trainable) continue;
    const bool decay = p.value.rank() >= 2;
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      if (decay) p.value[i] -= lr * cfg_.weight_decay * p.value[i];
      p.value[i] -= lr * mh / (std::sqrt(vh) + cfg_.eps);
    }
  }
}

decoder::HeadConfig RunConfig::head_config() const {
  decoder::HeadConfig h = head;
  const auto& d = data.grid.dims;
  h.scales[2].dims = d;
  h.scales[1].dims = {d.x / 2, d.y / 2, d.z / 2};
  h.scales[0].dims = {d.x / 4, d.y / 4, d.z / 4};
  h.lower = data.grid.lower;
  h.upper = data.grid.upper;
  h.n_classes = data.grid.n_classes;
  h.pada.feature_dim = data.rig.feature_dim;
  h.pada.n_levels = data.rig.levels.size();
  return h;
}

synth::DatasetSpec RunConfig::dataset_spec(std::size_t n_scenes) const {
  synth::DatasetSpec s = data;
  s.seed = seed;
  s.n_scenes = n_scenes;
  return s;
}

void RunConfig::validate() const {
  const auto& d = data.grid.dims;
  if (d.x % 4 != 0 || d.y % 4 != 0 || d.z % 4 != 0) {
    throw std::invalid_argument("config: fine grid dimensions must be divisible by 4");
  }
  if (threads == 0) throw std::invalid_argument("config: threads must be >= 1");
  data.grid.validate();
  data.rig.validate();
  optim.validate();
  head_config().validate();
  if (!loss.class_weights.empty() && loss.class_weights.size() != data.grid.n_classes) {
    throw std::invalid_argument("config: one class weight per class required");
  }
}

std::vector<pada::CameraView> make_views(diff::Graph& g,
                                         const std::vector<geometry::CameraModel>& cameras,
                                         const std::vector<std::vector<Tensor>>& features) {
  if (cameras.size() != features.size()) throw ShapeError("views: camera/feature count mismatch");
  std::vector<pada::CameraView> views;
  for (std::size_t n = 0; n < cameras.size(); ++n) {
    pada::CameraView v{cameras[n], {}};
    for (const Tensor& f : features[n]) v.levels.push_back(g.constant(f));
    views.push_back(std::move(v));
  }
  return views;
}

SampleGradient sample_gradient(const decoder::HeadConfig& head, diff::ParamSet& params,
                               const synth::Sample& sample, const objective::LossConfig& loss,
                               const pada::StageToggles& stages) {
  diff::Graph g;
  decoder::Binder bind(g, params);
  const auto views = make_views(g, sample.cameras, sample.features);
  const auto out = decoder::head_forward(bind, head, views, forward_options(stages));
  SampleGradient r;
  r.loss = objective::total_loss(out.logits, sample.labels, loss);
  g.backward(r.loss.total_var);
  std::unordered_map<const diff::Param*, std::size_t> index;
  for (std::size_t k = 0; k < params.items().size(); ++k) {
    index.emplace(params.items()[k].get(), k);
    r.grads.emplace_back(params.items()[k]->value.shape(), 0.0);
  }
  for (const auto& [node, param] : g.bindings()) {
    if (node->grad.size() != node->value.size()) continue;
    Tensor& dst = r.grads[index.at(param)];
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += node->grad[i];
  }
  r.loss.total_var = {};
  return r;
}

std::vector<std::uint64_t> fine_histogram(const std::vector<synth::Sample>& data,
                                          std::size_t n_classes) {
  std::vector<std::uint64_t> h(n_classes, 0);
  for (const auto& s : data) {
    const auto part = objective::histogram(s.labels[2].data, n_classes);
    for (std::size_t c = 0; c < n_classes; ++c) h[c] += part[c];
  }
  return h;
}

std::vector<double> dataset_class_weights(const std::vector<synth::Sample>& data,
                                          std::size_t n_classes) {
  return objective::class_weights(fine_histogram(data, n_classes));
}

diff::ParamSet initial_params(const RunConfig& cfg) {
  return decoder::init_params(cfg.head_config(), cfg.seed);
}

TrainResult train(const RunConfig& cfg, const std::vector<synth::Sample>& data,
                  const std::function<void(const StepLog&)>& on_step) {
  cfg.validate();
  const decoder::HeadConfig head = cfg.head_config();
  TrainResult r{initial_params(cfg), {}, {}};
  if (cfg.optim.steps > 0 && data.empty()) throw std::invalid_argument("train: no training data");
  objective::LossConfig loss = cfg.loss;
  if (loss.class_weights.empty() && !data.empty()) {
    loss.class_weights = dataset_class_weights(data, head.n_classes);
  }
  r.class_weights = loss.class_weights;
  AdamW opt(r.params, cfg.optim);
  const std::size_t b = cfg.optim.batch_size;
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t step = 0; step < cfg.optim.steps; ++step) {
    std::vector<SampleGradient> parts(b);
    parallel_for(b, cfg.threads, [&](std::size_t i) {
      const auto& sample = data[(step * b + i) % data.size()];
      parts[i] = sample_gradient(head, r.params, sample, loss, cfg.stages);
    });
    StepLog log;
    log.step = step;
    r.params.zero_grad();
    for (const auto& part : parts) {
      for (std::size_t k = 0; k < part.grads.size(); ++k) {
        Tensor& g = r.params.items()[k]->grad;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += part.grads[k][i] * inv_b;
      }
      log.loss.ce += part.loss.ce * inv_b;
      log.loss.sem_scal += part.loss.sem_scal * inv_b;
      log.loss.geo_scal += part.loss.geo_scal * inv_b;
      log.loss.lovasz += part.loss.lovasz * inv_b;
      log.loss.total += part.loss.total * inv_b;
      for (std::size_t s = 0; s < 3; ++s)
        for (std::size_t t = 0; t < 4; ++t)
          log.loss.per_scale[s][t] += part.loss.per_scale[s][t] * inv_b;
    }
    if (!std::isfinite(log.loss.total)) {
      throw DivergenceError("non-finite loss at step " + std::to_string(step));
    }
    log.grad_norm = clip_grad_norm(r.params, cfg.optim.clip_norm);
    if (!std::isfinite(log.grad_norm)) {
      throw DivergenceError("non-finite gradient at step " + std::to_string(step));
    }
    log.lr = learning_rate(cfg.optim, step);
    opt.step(r.params, log.lr);
    r.log.push_back(log);
    if (on_step) on_step(log);
  }
  r.params.zero_grad();
  return r;
}

objective::Labels predict_fine(const decoder::HeadConfig& head, diff::ParamSet& params,
                               const synth::Sample& sample, const pada::StageToggles& stages,
                               const EvalOptions& opts) {
  diff::Graph g;
  decoder::Binder bind(g, params);
  const auto cams = opts.corrupt_degrees != 0.0
                        ? synth::corrupt_extrinsics(sample.cameras, opts.corrupt_degrees,
                                                    opts.corrupt_seed)
                        : sample.cameras;
  const auto views = make_views(g, cams, sample.features);
  const auto out = decoder::head_forward(bind, head, views, forward_options(stages));
  return objective::predict(out.logits[2].value());
}

objective::Metrics evaluate(const RunConfig& cfg, diff::ParamSet& params,
                            const std::vector<synth::Sample>& data, const EvalOptions& opts) {
  const decoder::HeadConfig head = cfg.head_config();
  std::vector<objective::Metrics> parts(data.size(), objective::Metrics(head.n_classes));
  parallel_for(data.size(), opts.threads, [&](std::size_t i) {
    EvalOptions o = opts;
    o.corrupt_seed = opts.corrupt_seed + i;
    parts[i].accumulate(predict_fine(head, params, data[i], cfg.stages, o), data[i].labels[2].data);
  });
  objective::Metrics m(head.n_classes);
  for (const auto& p : parts) m.merge(p);
  return m;
}

objective::Metrics constant_baseline(const std::vector<synth::Sample>& data, std::uint8_t label,
                                     std::size_t n_classes) {
  objective::Metrics m(n_classes);
  for (const auto& s : data) {
    m.accumulate(objective::Labels(s.labels[2].data.size(), label), s.labels[2].data);
  }
  return m;
}

}  // namespace vggtocc::train
