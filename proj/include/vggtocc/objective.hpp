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

// Occupancy losses, multi-scale label generation and evaluation metrics.
//
// Logits are [..., K] with class 0 meaning free space; labels hold one class
// id per logit row in the same row-major order.

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vggtocc/decoder.hpp"
#include "vggtocc/diff.hpp"

namespace vggtocc::objective {

using diff::Var;
using Labels = std::vector<std::uint8_t>;

inline constexpr std::uint8_t kFree = 0;

struct LabelGrid {
  decoder::GridDims dims;
  Labels data;  // (x * Y + y) * Z + z
};

// Mean smoothed cross-entropy with target (1 - alpha) one-hot + alpha / K.
Var ce_smoothed(const Var& logits, std::span<const std::uint8_t> labels,
                double alpha = 0.1);

// Mean binary cross-entropy between 1 - p_free and the occupied indicator.
Var geo_scal(const Var& logits, std::span<const std::uint8_t> labels);

// Mean over voxels of w[y] * (-log p_y).
Var sem_scal(const Var& logits, std::span<const std::uint8_t> labels,
             std::span<const double> class_weights);

// Lovasz-softmax over the classes present in `labels`, averaged. `probs` must
// be normalized along the last axis.
Var lovasz_softmax(const Var& probs, std::span<const std::uint8_t> labels);

// Inverse-frequency weights normalized to mean 1 over the observed classes,
// then clipped to [lo, hi]. Unobserved classes get weight 1.
std::vector<double> class_weights(std::span<const std::uint64_t> histogram,
                                  double lo = 0.1, double hi = 10.0);

struct LossConfig {
  double label_smoothing = 0.1;
  std::array<double, 3> scale_weights{0.5, 0.75, 1.0};
  std::vector<double> class_weights;  // empty means all ones
  bool use_ce = true;
  bool use_sem_scal = true;
  bool use_geo_scal = true;
  bool use_lovasz = true;
};

// Term order within every per-scale array.
enum Term : std::size_t { kCe = 0, kSemScal = 1, kGeoScal = 2, kLovasz = 3 };

struct LossBreakdown {
  double ce = 0.0;
  double sem_scal = 0.0;
  double geo_scal = 0.0;
  double lovasz = 0.0;
  double total = 0.0;
  // Unweighted value of each term at each scale.
  std::array<std::array<double, 4>, 3> per_scale{};
  Var total_var;
};

// Scale-weighted sum of the enabled terms over the three scales.
LossBreakdown total_loss(std::span<const Var> logits,
                         std::span<const LabelGrid> labels,
                         const LossConfig& cfg);

// Majority vote over each 2x2x2 block. Ties prefer an occupied class over
// free, then the lower class id.
LabelGrid downsample_labels(const LabelGrid& fine, std::size_t n_classes);

// Fine grid followed by its two successive downsamplings, coarse first.
std::array<LabelGrid, 3> label_pyramid(const LabelGrid& fine, std::size_t n_classes);

// Argmax over the last axis.
Labels predict(const Tensor& logits);

// Additive confusion counts; merging shards equals one pass over the union.
struct Metrics {
  std::size_t n_classes = 0;
  std::vector<std::uint64_t> tp, fp, fn;
  std::uint64_t occ_tp = 0, occ_fp = 0, occ_fn = 0;

  explicit Metrics(std::size_t classes = 0);
  void accumulate(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt);
  void merge(const Metrics& other);

  // Binary occupied-vs-free IoU; 1 when both are empty.
  double iou() const;
  double class_iou(std::size_t c) const;
  // Mean over non-free classes with a nonempty union; 1 when there are none.
  double miou() const;
};

Metrics evaluate(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt,
                 std::size_t n_classes);

// Most frequent label of the histogram.
std::uint8_t majority_class(std::span<const std::uint64_t> histogram);

std::vector<std::uint64_t> histogram(std::span<const std::uint8_t> labels,
                                     std::size_t n_classes);

// One row per class (name, IoU) followed by binary IoU and mIoU.
std::string format_report(const Metrics& m, std::span<const std::string> class_names);

}  // namespace vggtocc::objective
