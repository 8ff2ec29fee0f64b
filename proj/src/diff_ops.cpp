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

#include <algorithm>
#include <array>
#include <cmath>

#include "vggtocc/diff.hpp"

namespace vggtocc::diff {

namespace {

void require_same(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <typename Fwd, typename Bwd>
Var binary(const Var& a, const Var& b, const char* op, Fwd fwd, Bwd bwd) {
  require_same(a, b, op);
  Tensor out(a.shape());
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
  Node* an = a.node();
  Node* bn = b.node();
  std::array<Var, 2> parents{a, b};
  return a.graph().record(
      std::move(out), parents, op, [an, bn, bwd](const Tensor& g) {
        const bool ga = an->requires_grad;
        const bool gb = bn->requires_grad;
        Tensor* gat = ga ? &an->ensure_grad() : nullptr;
        Tensor* gbt = gb ? &bn->ensure_grad() : nullptr;
        for (std::size_t i = 0; i < g.size(); ++i) {
          double da = 0.0;
          double db = 0.0;
          bwd(an->value[i], bn->value[i], g[i], da, db);
          if (ga) (*gat)[i] += da;
          if (gb) (*gbt)[i] += db;
        }
      });
}

template <typename Fwd, typename Bwd>
Var unary(const Var& a, const char* op, Fwd fwd, Bwd bwd) {
  Tensor out(a.shape());
  const Tensor& av = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
  Node* an = a.node();
  std::array<Var, 1> parents{a};
  Var result = a.graph().record(std::move(out), parents, op, nullptr);
  Node* on = result.node();
  if (on->requires_grad) {
    on->backward = [an, on, bwd](const Tensor& g) {
      Tensor& ga = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * bwd(an->value[i], on->value[i]);
      }
    };
  }
  return result;
}

}  // namespace

Var add(const Var& a, const Var& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double g, double& da, double& db) {
        da = g;
        db = g;
      });
}

Var sub(const Var& a, const Var& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double g, double& da, double& db) {
        da = g;
        db = -g;
      });
}

Var mul(const Var& a, const Var& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double x, double y, double g, double& da, double& db) {
        da = g * y;
        db = g * x;
      });
}

Var div(const Var& a, const Var& b) {
  return binary(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double x, double y, double g, double& da, double& db) {
        da = g / y;
        db = -g * x / (y * y);
      });
}

Var guarded_div(const Var& a, const Var& b, double eps) {
  return binary(
      a, b, "guarded_div",
      [eps](double x, double y) { return x / std::max(y, eps); },
      [eps](double x, double y, double g, double& da, double& db) {
        const double d = std::max(y, eps);
        da = g / d;
        db = y >= eps ? -g * x / (d * d) : 0.0;
      });
}

Var scale(const Var& a, double c) {
  return unary(
      a, "scale", [c](double x) { return c * x; },
      [c](double, double) { return c; });
}

Var add_scalar(const Var& a, double c) {
  return unary(
      a, "add_scalar", [c](double x) { return x + c; },
      [](double, double) { return 1.0; });
}

Var one_minus(const Var& a) {
  return unary(
      a, "one_minus", [](double x) { return 1.0 - x; },
      [](double, double) { return -1.0; });
}

Var log(const Var& a) {
  return unary(
      a, "log", [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Var detach(const Var& a) {
  Var out = a.graph().constant(a.value());
  out.node()->op = "detach";
  return out;
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  Node* an = a.node();
  std::array<Var, 1> parents{a};
  return a.graph().record(std::move(out), parents, "reshape",
                          [an](const Tensor& g) {
                            Tensor& ga = an->ensure_grad();
                            for (std::size_t i = 0; i < g.size(); ++i) {
                              ga[i] += g[i];
                            }
                          });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().vec()) s += v;
  Node* an = a.node();
  std::array<Var, 1> parents{a};
  return a.graph().record(Tensor::scalar(s), parents, "sum",
                          [an](const Tensor& g) {
                            Tensor& ga = an->ensure_grad();
                            for (std::size_t i = 0; i < ga.size(); ++i) {
                              ga[i] += g[0];
                            }
                          });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.size());
  return scale(sum(a), 1.0 / n);
}

Var activation(const Var& x, Activation kind) {
  switch (kind) {
    case Activation::kRelu:
      return unary(
          x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
          [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
    case Activation::kSilu:
      return unary(
          x, "silu", [](double v) { return v / (1.0 + std::exp(-v)); },
          [](double v, double) {
            const double s = 1.0 / (1.0 + std::exp(-v));
            return s * (1.0 + v * (1.0 - s));
          });
    case Activation::kSigmoid:
      return unary(
          x, "sigmoid", [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
          [](double, double y) { return y * (1.0 - y); });
    case Activation::kTanh:
      return unary(
          x, "tanh", [](double v) { return std::tanh(v); },
          [](double, double y) { return 1.0 - y * y; });
  }
  throw std::invalid_argument("unknown activation");
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  if (wv.rank() != 2 || xv.last_dim() != wv.dim(0)) {
    throw ShapeError("linear: input " + shape_str(xv.shape()) +
                     " incompatible with weight " + shape_str(wv.shape()));
  }
  const std::size_t m = xv.rows();
  const std::size_t k = wv.dim(0);
  const std::size_t n = wv.dim(1);
  if (bias && (bias.size() != n)) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) +
                     " does not match output width " + std::to_string(n));
  }
  Shape out_shape = xv.shape();
  if (out_shape.empty()) out_shape.push_back(1);
  out_shape.back() = n;
  Tensor out(out_shape);
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    if (bias) {
      for (std::size_t j = 0; j < n; ++j) orow[j] = bias.value()[j];
    }
    const double* xrow = xv.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double a = xrow[p];
      if (a == 0.0) continue;
      const double* wrow = wv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += a * wrow[j];
    }
  }
  Node* xn = x.node();
  Node* wn = weight.node();
  Node* bn = bias ? bias.node() : nullptr;
  std::array<Var, 3> parents{x, weight, bias};
  return x.graph().record(
      std::move(out), parents, "linear", [xn, wn, bn, m, k, n](const Tensor& g) {
        if (xn->requires_grad) {
          Tensor& gx = xn->ensure_grad();
          for (std::size_t i = 0; i < m; ++i) {
            const double* grow = g.data() + i * n;
            double* gxrow = gx.data() + i * k;
            for (std::size_t p = 0; p < k; ++p) {
              const double* wrow = wn->value.data() + p * n;
              double acc = 0.0;
              for (std::size_t j = 0; j < n; ++j) acc += grow[j] * wrow[j];
              gxrow[p] += acc;
            }
          }
        }
        if (wn->requires_grad) {
          Tensor& gw = wn->ensure_grad();
          for (std::size_t i = 0; i < m; ++i) {
            const double* grow = g.data() + i * n;
            const double* xrow = xn->value.data() + i * k;
            for (std::size_t p = 0; p < k; ++p) {
              const double a = xrow[p];
              if (a == 0.0) continue;
              double* gwrow = gw.data() + p * n;
              for (std::size_t j = 0; j < n; ++j) gwrow[j] += a * grow[j];
            }
          }
        }
        if (bn != nullptr && bn->requires_grad) {
          Tensor& gb = bn->ensure_grad();
          for (std::size_t i = 0; i < m; ++i) {
            const double* grow = g.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) gb[j] += grow[j];
          }
        }
      });
}

Var grouped_linear(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  if (xv.rank() != 3 || wv.rank() != 3 || xv.dim(1) != wv.dim(0) ||
      xv.dim(2) != wv.dim(1)) {
    throw ShapeError("grouped_linear: input " + shape_str(xv.shape()) +
                     " incompatible with weight " + shape_str(wv.shape()));
  }
  const std::size_t m = xv.dim(0);
  const std::size_t groups = wv.dim(0);
  const std::size_t cin = wv.dim(1);
  const std::size_t cout = wv.dim(2);
  if (bias && bias.size() != groups * cout) {
    throw ShapeError("grouped_linear: bias size mismatch");
  }
  Tensor out({m, groups * cout});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t gi = 0; gi < groups; ++gi) {
      double* orow = out.data() + (i * groups + gi) * cout;
      if (bias) {
        for (std::size_t j = 0; j < cout; ++j) {
          orow[j] = bias.value()[gi * cout + j];
        }
      }
      const double* xrow = xv.data() + (i * groups + gi) * cin;
      for (std::size_t p = 0; p < cin; ++p) {
        const double* wrow = wv.data() + (gi * cin + p) * cout;
        for (std::size_t j = 0; j < cout; ++j) orow[j] += xrow[p] * wrow[j];
      }
    }
  }
  Node* xn = x.node();
  Node* wn = weight.node();
  Node* bn = bias ? bias.node() : nullptr;
  std::array<Var, 3> parents{x, weight, bias};
  return x.graph().record(
      std::move(out), parents, "grouped_linear",
      [xn, wn, bn, m, groups, cin, cout](const Tensor& g) {
        Tensor* gx = xn->requires_grad ? &xn->ensure_grad() : nullptr;
        Tensor* gw = wn->requires_grad ? &wn->ensure_grad() : nullptr;
        Tensor* gb =
            (bn != nullptr && bn->requires_grad) ? &bn->ensure_grad() : nullptr;
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t gi = 0; gi < groups; ++gi) {
            const double* grow = g.data() + (i * groups + gi) * cout;
            const double* xrow = xn->value.data() + (i * groups + gi) * cin;
            for (std::size_t p = 0; p < cin; ++p) {
              const double* wrow = wn->value.data() + (gi * cin + p) * cout;
              double acc = 0.0;
              for (std::size_t j = 0; j < cout; ++j) {
                acc += grow[j] * wrow[j];
                if (gw) (*gw)[(gi * cin + p) * cout + j] += xrow[p] * grow[j];
              }
              if (gx) (*gx)[(i * groups + gi) * cin + p] += acc;
            }
            if (gb) {
              for (std::size_t j = 0; j < cout; ++j) {
                (*gb)[gi * cout + j] += grow[j];
              }
            }
          }
        }
      });
}

Var layernorm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Tensor& xv = x.value();
  const std::size_t c = xv.last_dim();
  const std::size_t rows = xv.rows();
  if ((gamma && gamma.size() != c) || (beta && beta.size() != c)) {
    throw ShapeError("layernorm: affine size mismatch");
  }
  Tensor out(xv.shape());
  Tensor xhat(xv.shape());
  std::vector<double> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += xr[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(c);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (xr[j] - mu) * rstd[r];
      xhat[r * c + j] = h;
      double y = h;
      if (gamma) y *= gamma.value()[j];
      if (beta) y += beta.value()[j];
      out[r * c + j] = y;
    }
  }
  Node* xn = x.node();
  Node* gn = gamma ? gamma.node() : nullptr;
  Node* bn = beta ? beta.node() : nullptr;
  std::array<Var, 3> parents{x, gamma, beta};
  return x.graph().record(
      std::move(out), parents, "layernorm",
      [xn, gn, bn, xhat = std::move(xhat), rstd = std::move(rstd), rows,
       c](const Tensor& g) {
        Tensor* gx = xn->requires_grad ? &xn->ensure_grad() : nullptr;
        Tensor* gg =
            (gn != nullptr && gn->requires_grad) ? &gn->ensure_grad() : nullptr;
        Tensor* gbt =
            (bn != nullptr && bn->requires_grad) ? &bn->ensure_grad() : nullptr;
        std::vector<double> gh(c);
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_gh = 0.0;
          double mean_ghx = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            const double gj = g[r * c + j];
            const double h = xhat[r * c + j];
            if (gg) (*gg)[j] += gj * h;
            if (gbt) (*gbt)[j] += gj;
            gh[j] = gn != nullptr ? gj * gn->value[j] : gj;
            mean_gh += gh[j];
            mean_ghx += gh[j] * h;
          }
          if (!gx) continue;
          mean_gh /= static_cast<double>(c);
          mean_ghx /= static_cast<double>(c);
          for (std::size_t j = 0; j < c; ++j) {
            (*gx)[r * c + j] +=
                rstd[r] * (gh[j] - mean_gh - xhat[r * c + j] * mean_ghx);
          }
        }
      });
}

Var softmax(const Var& x, std::size_t axis) {
  const Shape& shape = x.shape();
  if (axis >= shape.size()) throw ShapeError("softmax: axis out of range");
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t n = shape[axis];
  Tensor out(shape);
  const Tensor& xv = x.value();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = xv[base];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xv[base + j * inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double e = std::exp(xv[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= z;
    }
  }
  Node* xn = x.node();
  std::array<Var, 1> parents{x};
  Var result = x.graph().record(std::move(out), parents, "softmax", nullptr);
  Node* on = result.node();
  if (on->requires_grad) {
    on->backward = [xn, on, outer, inner, n](const Tensor& g) {
      Tensor& gx = xn->ensure_grad();
      const Tensor& y = on->value;
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * n * inner + in;
          double dot = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            dot += g[base + j * inner] * y[base + j * inner];
          }
          for (std::size_t j = 0; j < n; ++j) {
            const std::size_t i = base + j * inner;
            gx[i] += y[i] * (g[i] - dot);
          }
        }
      }
    };
  }
  return result;
}

Var concat_channels(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rows() != bv.rows() || av.rank() != bv.rank()) {
    throw ShapeError("concat_channels: leading shapes differ " +
                     shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  }
  const std::size_t ca = av.last_dim();
  const std::size_t cb = bv.last_dim();
  const std::size_t rows = av.rows();
  Shape shape = av.shape();
  shape.back() = ca + cb;
  Tensor out(shape);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.data() + r * ca, ca, out.data() + r * (ca + cb));
    std::copy_n(bv.data() + r * cb, cb, out.data() + r * (ca + cb) + ca);
  }
  Node* an = a.node();
  Node* bn = b.node();
  std::array<Var, 2> parents{a, b};
  return a.graph().record(
      std::move(out), parents, "concat", [an, bn, rows, ca, cb](const Tensor& g) {
        if (an->requires_grad) {
          Tensor& ga = an->ensure_grad();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < ca; ++j) {
              ga[r * ca + j] += g[r * (ca + cb) + j];
            }
          }
        }
        if (bn->requires_grad) {
          Tensor& gb = bn->ensure_grad();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < cb; ++j) {
              gb[r * cb + j] += g[r * (ca + cb) + ca + j];
            }
          }
        }
      });
}

Var mul_broadcast(const Var& x, const Var& scales, std::size_t inner) {
  const std::size_t groups = scales.size();
  if (inner == 0 || x.size() % (groups * inner) != 0) {
    throw ShapeError("mul_broadcast: " + shape_str(x.shape()) +
                     " not divisible into groups of " + std::to_string(groups));
  }
  Tensor out(x.shape());
  const Tensor& xv = x.value();
  const Tensor& sv = scales.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = xv[i] * sv[(i / inner) % groups];
  }
  Node* xn = x.node();
  Node* sn = scales.node();
  std::array<Var, 2> parents{x, scales};
  return x.graph().record(
      std::move(out), parents, "mul_broadcast",
      [xn, sn, groups, inner](const Tensor& g) {
        Tensor* gx = xn->requires_grad ? &xn->ensure_grad() : nullptr;
        Tensor* gs = sn->requires_grad ? &sn->ensure_grad() : nullptr;
        for (std::size_t i = 0; i < g.size(); ++i) {
          const std::size_t gi = (i / inner) % groups;
          if (gx) (*gx)[i] += g[i] * sn->value[gi];
          if (gs) (*gs)[gi] += g[i] * xn->value[i];
        }
      });
}

Var expand_last(const Var& x, std::size_t n) {
  if (x.value().last_dim() != 1) {
    throw ShapeError("expand_last: last axis must be 1, got " +
                     shape_str(x.shape()));
  }
  Shape shape = x.shape();
  shape.back() = n;
  Tensor out(shape);
  const std::size_t rows = x.size();
  for (std::size_t r = 0; r < rows; ++r) {
    std::fill_n(out.data() + r * n, n, x.value()[r]);
  }
  Node* xn = x.node();
  std::array<Var, 1> parents{x};
  return x.graph().record(std::move(out), parents, "expand_last",
                          [xn, rows, n](const Tensor& g) {
                            Tensor& gx = xn->ensure_grad();
                            for (std::size_t r = 0; r < rows; ++r) {
                              double acc = 0.0;
                              for (std::size_t j = 0; j < n; ++j) {
                                acc += g[r * n + j];
                              }
                              gx[r] += acc;
                            }
                          });
}

Var masked_fill(const Var& x, std::span<const std::uint8_t> mask, double fill) {
  if (mask.size() != x.size()) throw ShapeError("masked_fill: mask size");
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = mask[i] ? x.value()[i] : fill;
  }
  Node* xn = x.node();
  std::array<Var, 1> parents{x};
  return x.graph().record(
      std::move(out), parents, "masked_fill",
      [xn, keep = std::vector<std::uint8_t>(mask.begin(), mask.end())](
          const Tensor& g) {
        Tensor& gx = xn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (keep[i]) gx[i] += g[i];
        }
      });
}

}  // namespace vggtocc::diff
