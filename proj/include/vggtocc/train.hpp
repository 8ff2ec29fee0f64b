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

// Optimization and evaluation of the occupancy head on synthetic data.

#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "vggtocc/decoder.hpp"
#include "vggtocc/objective.hpp"
#include "vggtocc/synth.hpp"

namespace vggtocc::train {

struct OptimConfig {
  double lr = 1e-4;
  double weight_decay = 0.01;
  double min_lr = 1e-6;
  std::size_t warmup = 50;
  std::size_t steps = 500;
  std::size_t batch_size = 1;
  double clip_norm = 35.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

// Linear warmup from lr / warmup to lr, then cosine decay to min_lr at the
// final step. `step` is zero-based.
double learning_rate(const OptimConfig& cfg, std::size_t step);

// Scales every gradient so the global L2 norm is at most `max_norm`.
// Returns the norm before clipping.
double clip_grad_norm(diff::ParamSet& params, double max_norm);

// Adam with decoupled weight decay. Decay applies to parameters of rank >= 2.
class AdamW {
 public:
  AdamW(const diff::ParamSet& params, const OptimConfig& cfg);
  void step(diff::ParamSet& params, double lr);
  std::size_t steps_taken() const { return t_; }

 private:
  OptimConfig cfg_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

// Everything a run needs. Head grid, bounds, class count and feature shape
// are derived from the data section by head_config().
struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t n_train = 8;
  std::size_t n_val = 4;
  std::size_t threads = 1;
  synth::DatasetSpec data;
  decoder::HeadConfig head = decoder::HeadConfig::toy();
  OptimConfig optim;
  objective::LossConfig loss;
  pada::StageToggles stages;

  decoder::HeadConfig head_config() const;
  synth::DatasetSpec dataset_spec(std::size_t n_scenes) const;
  void validate() const;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StepLog {
  std::size_t step = 0;
  double lr = 0.0;
  double grad_norm = 0.0;
  objective::LossBreakdown loss;  // batch mean; total_var unset
};

struct TrainResult {
  diff::ParamSet params;
  std::vector<StepLog> log;
  std::vector<double> class_weights;
};

std::vector<pada::CameraView> make_views(diff::Graph& g,
                                         const std::vector<geometry::CameraModel>& cameras,
                                         const std::vector<std::vector<Tensor>>& features);

// Gradients of the total loss on one sample, one tensor per parameter in
// ParamSet order (zeros for unused parameters).
struct SampleGradient {
  std::vector<Tensor> grads;
  objective::LossBreakdown loss;
};
SampleGradient sample_gradient(const decoder::HeadConfig& head, diff::ParamSet& params,
                               const synth::Sample& sample, const objective::LossConfig& loss,
                               const pada::StageToggles& stages);

// Class weights from the fine-label histogram of `data`.
std::vector<double> dataset_class_weights(const std::vector<synth::Sample>& data,
                                          std::size_t n_classes);

// Runs cfg.optim.steps AdamW steps over `data` in a fixed cyclic order.
// Batches are reduced in sample order, so threads never change results.
// Throws DivergenceError on a non-finite loss.
TrainResult train(const RunConfig& cfg, const std::vector<synth::Sample>& data,
                  const std::function<void(const StepLog&)>& on_step = {});

// Initial parameters of a run.
diff::ParamSet initial_params(const RunConfig& cfg);

struct EvalOptions {
  // Replaces each sample's cameras by rotated copies at inference.
  double corrupt_degrees = 0.0;
  std::uint64_t corrupt_seed = 0;
  std::size_t threads = 1;
};

// Fine-scale predictions of one sample.
objective::Labels predict_fine(const decoder::HeadConfig& head, diff::ParamSet& params,
                               const synth::Sample& sample, const pada::StageToggles& stages,
                               const EvalOptions& opts = {});

objective::Metrics evaluate(const RunConfig& cfg, diff::ParamSet& params,
                            const std::vector<synth::Sample>& data,
                            const EvalOptions& opts = {});

// Metrics of predicting `label` everywhere.
objective::Metrics constant_baseline(const std::vector<synth::Sample>& data,
                                     std::uint8_t label, std::size_t n_classes);

std::vector<std::uint64_t> fine_histogram(const std::vector<synth::Sample>& data,
                                          std::size_t n_classes);

}  // namespace vggtocc::train
