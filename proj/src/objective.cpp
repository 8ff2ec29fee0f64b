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

#include "vggtocc/objective.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace vggtocc::objective {
namespace {

using diff::Node;

void check_labels(const Tensor& logits, std::span<const std::uint8_t> labels,
                  const char* what) {
  if (logits.shape().empty() || logits.last_dim() < 2) {
    throw ShapeError(std::string(what) + ": need at least two classes");
  }
  if (labels.size() != logits.rows()) {
    throw ShapeError(std::string(what) + ": label count does not match logits");
  }
  const std::size_t k = logits.last_dim();
  for (std::uint8_t y : labels) {
    if (y >= k) throw std::invalid_argument(std::string(what) + ": label out of range");
  }
}

double logsumexp(const double* z, std::size_t begin, std::size_t end) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t k = begin; k < end; ++k) mx = std::max(mx, z[k]);
  double s = 0.0;
  for (std::size_t k = begin; k < end; ++k) s += std::exp(z[k] - mx);
  return mx + std::log(s);
}

// Scalar node whose gradient w.r.t. `x` is the fixed tensor `dx`.
Var scalar_with_grad(const Var& x, double value, Tensor dx, const char* op) {
  std::array<Var, 1> parents{x};
  Var out = x.graph().record(Tensor({1}, value), parents, op, nullptr);
  Node* on = out.node();
  if (on->requires_grad) {
    Node* xn = x.node();
    on->backward = [xn, dx = std::move(dx)](const Tensor& g) {
      Tensor& gx = xn->ensure_grad();
      for (std::size_t i = 0; i < dx.size(); ++i) gx[i] += g[0] * dx[i];
    };
  }
  return out;
}

}  // namespace

Var ce_smoothed(const Var& logits, std::span<const std::uint8_t> labels, double alpha) {
  const Tensor& z = logits.value();
  check_labels(z, labels, "ce_smoothed");
  const std::size_t k = z.last_dim();
  const std::size_t n = z.rows();
  const double off = alpha / static_cast<double>(k);
  const double on = 1.0 - alpha + off;
  Tensor dz(z.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* zi = z.data() + i * k;
    const double lse = logsumexp(zi, 0, k);
    double loss = lse;
    for (std::size_t c = 0; c < k; ++c) {
      const double q = c == labels[i] ? on : off;
      loss -= q * zi[c];
      dz[i * k + c] = (std::exp(zi[c] - lse) - q) / static_cast<double>(n);
    }
    total += loss;
  }
  return scalar_with_grad(logits, total / static_cast<double>(n), std::move(dz),
                          "ce_smoothed");
}

Var geo_scal(const Var& logits, std::span<const std::uint8_t> labels) {
  const Tensor& z = logits.value();
  check_labels(z, labels, "geo_scal");
  const std::size_t k = z.last_dim();
  const std::size_t n = z.rows();
  const double inv_n = 1.0 / static_cast<double>(n);
  Tensor dz(z.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* zi = z.data() + i * k;
    double* gi = dz.data() + i * k;
    const double lse = logsumexp(zi, 0, k);
    for (std::size_t c = 0; c < k; ++c) gi[c] = std::exp(zi[c] - lse) * inv_n;
    if (labels[i] == kFree) {
      total += lse - zi[0];
      gi[0] -= inv_n;
    } else {
      const double lse_occ = logsumexp(zi, 1, k);
      total += lse - lse_occ;
      for (std::size_t c = 1; c < k; ++c) gi[c] -= std::exp(zi[c] - lse_occ) * inv_n;
    }
  }
  return scalar_with_grad(logits, total * inv_n, std::move(dz), "geo_scal");
}

Var sem_scal(const Var& logits, std::span<const std::uint8_t> labels,
             std::span<const double> class_weights) {
  const Tensor& z = logits.value();
  check_labels(z, labels, "sem_scal");
  const std::size_t k = z.last_dim();
  const std::size_t n = z.rows();
  if (!class_weights.empty() && class_weights.size() != k) {
    throw ShapeError("sem_scal: one weight per class required");
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  Tensor dz(z.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* zi = z.data() + i * k;
    const std::uint8_t y = labels[i];
    const double w = class_weights.empty() ? 1.0 : class_weights[y];
    const double lse = logsumexp(zi, 0, k);
    total += w * (lse - zi[y]);
    for (std::size_t c = 0; c < k; ++c) {
      dz[i * k + c] = w * (std::exp(zi[c] - lse) - (c == y ? 1.0 : 0.0)) * inv_n;
    }
  }
  return scalar_with_grad(logits, total * inv_n, std::move(dz), "sem_scal");
}

Var lovasz_softmax(const Var& probs, std::span<const std::uint8_t> labels) {
  const Tensor& p = probs.value();
  check_labels(p, labels, "lovasz_softmax");
  const std::size_t k = p.last_dim();
  const std::size_t n = p.rows();
  std::vector<bool> present(k, false);
  for (std::uint8_t y : labels) present[y] = true;
  const std::size_t n_present = static_cast<std::size_t>(
      std::count(present.begin(), present.end(), true));
  Tensor dp(p.shape());
  double total = 0.0;
  std::vector<double> err(n);
  std::vector<std::size_t> order(n);
  for (std::size_t c = 0; c < k; ++c) {
    if (!present[c]) continue;
    double gts = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool fg = labels[i] == c;
      err[i] = fg ? 1.0 - p[i * k + c] : p[i * k + c];
      gts += fg ? 1.0 : 0.0;
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return err[a] > err[b]; });
    // Jaccard loss after admitting the first j sorted errors; the increments
    // are the Lovasz extension weights.
    double cum_fg = 0.0;
    double cum_bg = 0.0;
    double prev = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t i = order[j];
      const bool fg = labels[i] == c;
      (fg ? cum_fg : cum_bg) += 1.0;
      const double jac = 1.0 - (gts - cum_fg) / (gts + cum_bg);
      const double w = (jac - prev) / static_cast<double>(n_present);
      prev = jac;
      total += w * err[i];
      dp[i * k + c] += fg ? -w : w;
    }
  }
  return scalar_with_grad(probs, total, std::move(dp), "lovasz_softmax");
}

std::vector<double> class_weights(std::span<const std::uint64_t> histogram, double lo,
                                  double hi) {
  std::vector<double> w(histogram.size(), 1.0);
  double sum = 0.0;
  std::size_t observed = 0;
  for (std::size_t c = 0; c < histogram.size(); ++c) {
    if (histogram[c] == 0) continue;
    w[c] = 1.0 / static_cast<double>(histogram[c]);
    sum += w[c];
    ++observed;
  }
  if (observed == 0) return w;
  const double norm = static_cast<double>(observed) / sum;
  for (std::size_t c = 0; c < histogram.size(); ++c) {
    if (histogram[c] != 0) w[c] = std::clamp(w[c] * norm, lo, hi);
  }
  return w;
}

LossBreakdown total_loss(std::span<const Var> logits, std::span<const LabelGrid> labels,
                         const LossConfig& cfg) {
  if (logits.size() != 3 || labels.size() != 3) {
    throw ShapeError("total_loss: three scales required");
  }
  LossBreakdown out;
  std::array<double*, 4> sums{&out.ce, &out.sem_scal, &out.geo_scal, &out.lovasz};
  const std::array<bool, 4> enabled{cfg.use_ce, cfg.use_sem_scal, cfg.use_geo_scal,
                                    cfg.use_lovasz};
  Var total;
  for (std::size_t s = 0; s < 3; ++s) {
    const double ws = cfg.scale_weights[s];
    if (ws == 0.0) continue;
    std::array<Var, 4> terms;
    const auto& y = labels[s].data;
    if (enabled[kCe]) terms[kCe] = ce_smoothed(logits[s], y, cfg.label_smoothing);
    if (enabled[kSemScal]) terms[kSemScal] = sem_scal(logits[s], y, cfg.class_weights);
    if (enabled[kGeoScal]) terms[kGeoScal] = geo_scal(logits[s], y);
    if (enabled[kLovasz]) {
      terms[kLovasz] = lovasz_softmax(diff::softmax(logits[s], logits[s].shape().size() - 1), y);
    }
    for (std::size_t t = 0; t < 4; ++t) {
      if (!terms[t]) continue;
      const double v = terms[t].value()[0];
      out.per_scale[s][t] = v;
      *sums[t] += ws * v;
      const Var weighted = diff::scale(terms[t], ws);
      total = total ? diff::add(total, weighted) : weighted;
    }
  }
  out.total = out.ce + out.sem_scal + out.geo_scal + out.lovasz;
  if (!total) total = logits[0].graph().constant(Tensor({1}));
  out.total_var = total;
  return out;
}

LabelGrid downsample_labels(const LabelGrid& fine, std::size_t n_classes) {
  const auto& d = fine.dims;
  if (d.x % 2 != 0 || d.y % 2 != 0 || d.z % 2 != 0) {
    throw ShapeError("downsample_labels: dimensions must be even");
  }
  if (fine.data.size() != d.count()) throw ShapeError("downsample_labels: size mismatch");
  LabelGrid out{{d.x / 2, d.y / 2, d.z / 2}, {}};
  out.data.resize(out.dims.count());
  std::vector<unsigned> votes(n_classes);
  for (std::size_t x = 0; x < out.dims.x; ++x) {
    for (std::size_t y = 0; y < out.dims.y; ++y) {
      for (std::size_t z = 0; z < out.dims.z; ++z) {
        std::fill(votes.begin(), votes.end(), 0u);
        for (std::size_t c = 0; c < 8; ++c) {
          const std::size_t fx = 2 * x + (c >> 2), fy = 2 * y + ((c >> 1) & 1),
                            fz = 2 * z + (c & 1);
          const std::uint8_t v = fine.data[(fx * d.y + fy) * d.z + fz];
          if (v >= n_classes) throw std::invalid_argument("downsample_labels: bad label");
          ++votes[v];
        }
        std::size_t best = 0;
        for (std::size_t c = 1; c < n_classes; ++c) {
          if (votes[c] > votes[best] || (best == kFree && votes[c] == votes[best] && votes[c] > 0)) {
            best = c;
          }
        }
        out.data[(x * out.dims.y + y) * out.dims.z + z] = static_cast<std::uint8_t>(best);
      }
    }
  }
  return out;
}

std::array<LabelGrid, 3> label_pyramid(const LabelGrid& fine, std::size_t n_classes) {
  LabelGrid mid = downsample_labels(fine, n_classes);
  LabelGrid coarse = downsample_labels(mid, n_classes);
  return {std::move(coarse), std::move(mid), fine};
}

Labels predict(const Tensor& logits) {
  const std::size_t k = logits.last_dim();
  Labels out(logits.rows());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double* zi = logits.data() + i * k;
    out[i] = static_cast<std::uint8_t>(std::max_element(zi, zi + k) - zi);
  }
  return out;
}

Metrics::Metrics(std::size_t classes)
    : n_classes(classes), tp(classes, 0), fp(classes, 0), fn(classes, 0) {}

void Metrics::accumulate(std::span<const std::uint8_t> pred,
                         std::span<const std::uint8_t> gt) {
  if (pred.size() != gt.size()) throw ShapeError("metrics: prediction size mismatch");
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const std::uint8_t p = pred[i], g = gt[i];
    if (p >= n_classes || g >= n_classes) throw std::invalid_argument("metrics: bad label");
    if (p == g) {
      ++tp[p];
    } else {
      ++fp[p];
      ++fn[g];
    }
    const bool po = p != kFree, go = g != kFree;
    if (po && go) ++occ_tp;
    else if (po) ++occ_fp;
    else if (go) ++occ_fn;
  }
}

void Metrics::merge(const Metrics& other) {
  if (other.n_classes != n_classes) throw ShapeError("metrics: class count mismatch");
  for (std::size_t c = 0; c < n_classes; ++c) {
    tp[c] += other.tp[c];
    fp[c] += other.fp[c];
    fn[c] += other.fn[c];
  }
  occ_tp += other.occ_tp;
  occ_fp += other.occ_fp;
  occ_fn += other.occ_fn;
}

double Metrics::iou() const {
  const std::uint64_t u = occ_tp + occ_fp + occ_fn;
  return u == 0 ? 1.0 : static_cast<double>(occ_tp) / static_cast<double>(u);
}

double Metrics::class_iou(std::size_t c) const {
  const std::uint64_t u = tp[c] + fp[c] + fn[c];
  return u == 0 ? 1.0 : static_cast<double>(tp[c]) / static_cast<double>(u);
}

double Metrics::miou() const {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t c = 1; c < n_classes; ++c) {
    if (tp[c] + fp[c] + fn[c] == 0) continue;
    sum += class_iou(c);
    ++n;
  }
  return n == 0 ? 1.0 : sum / static_cast<double>(n);
}

Metrics evaluate(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt,
                 std::size_t n_classes) {
  Metrics m(n_classes);
  m.accumulate(pred, gt);
  return m;
}

std::uint8_t majority_class(std::span<const std::uint64_t> histogram) {
  if (histogram.empty()) throw std::invalid_argument("majority_class: empty histogram");
  return static_cast<std::uint8_t>(std::max_element(histogram.begin(), histogram.end()) -
                                   histogram.begin());
}

std::vector<std::uint64_t> histogram(std::span<const std::uint8_t> labels,
                                     std::size_t n_classes) {
  std::vector<std::uint64_t> h(n_classes, 0);
  for (std::uint8_t y : labels) {
    if (y >= n_classes) throw std::invalid_argument("histogram: bad label");
    ++h[y];
  }
  return h;
}

std::string format_report(const Metrics& m, std::span<const std::string> class_names) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << std::left << std::setw(16) << "class" << "iou\n";
  for (std::size_t c = 0; c < m.n_classes; ++c) {
    const std::string name =
        c < class_names.size() ? class_names[c] : "class" + std::to_string(c);
    os << std::left << std::setw(16) << name << m.class_iou(c) << '\n';
  }
  os << std::left << std::setw(16) << "IoU" << m.iou() << '\n';
  os << std::left << std::setw(16) << "mIoU" << m.miou() << '\n';
  return os.str();
}

}  // namespace vggtocc::objective
