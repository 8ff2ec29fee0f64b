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

// Bilinear stencil for one normalized coordinate pair on an H×W grid.
struct Stencil {
  std::size_t x0, x1, y0, y1;
  double ax, ay;
  // d(pixel)/d(normalized) per axis; zero when the coordinate was clamped.
  double dpx, dpy;
};

Stencil make_stencil(double u, double v, std::size_t h, std::size_t w) {
  Stencil s{};
  const double wmax = static_cast<double>(w - 1);
  const double hmax = static_cast<double>(h - 1);
  double px = u * static_cast<double>(w) - 0.5;
  double py = v * static_cast<double>(h) - 0.5;
  s.dpx = static_cast<double>(w);
  s.dpy = static_cast<double>(h);
  if (!(px > 0.0)) {
    px = 0.0;
    s.dpx = 0.0;
  } else if (px >= wmax) {
    px = wmax;
    s.dpx = 0.0;
  }
  if (!(py > 0.0)) {
    py = 0.0;
    s.dpy = 0.0;
  } else if (py >= hmax) {
    py = hmax;
    s.dpy = 0.0;
  }
  s.x0 = static_cast<std::size_t>(std::floor(px));
  s.y0 = static_cast<std::size_t>(std::floor(py));
  s.x1 = std::min(s.x0 + 1, w - 1);
  s.y1 = std::min(s.y0 + 1, h - 1);
  s.ax = px - static_cast<double>(s.x0);
  s.ay = py - static_cast<double>(s.y0);
  return s;
}

void check_map(const Tensor& map, const char* op) {
  if (map.rank() != 3 || map.dim(0) == 0 || map.dim(1) == 0) {
    throw ShapeError(std::string(op) + ": feature map must be [H, W, C], got " +
                     shape_str(map.shape()));
  }
}

// Accumulates `weight` times the bilinear sample of channels [c0, c0+n).
void sample_into(const Tensor& map, const Stencil& s, std::size_t c0,
                 std::size_t n, double weight, double* out) {
  const std::size_t w = map.dim(1);
  const std::size_t c = map.dim(2);
  const double w00 = (1 - s.ax) * (1 - s.ay) * weight;
  const double w01 = s.ax * (1 - s.ay) * weight;
  const double w10 = (1 - s.ax) * s.ay * weight;
  const double w11 = s.ax * s.ay * weight;
  const double* f00 = map.data() + (s.y0 * w + s.x0) * c + c0;
  const double* f01 = map.data() + (s.y0 * w + s.x1) * c + c0;
  const double* f10 = map.data() + (s.y1 * w + s.x0) * c + c0;
  const double* f11 = map.data() + (s.y1 * w + s.x1) * c + c0;
  for (std::size_t j = 0; j < n; ++j) {
    out[j] += w00 * f00[j] + w01 * f01[j] + w10 * f10[j] + w11 * f11[j];
  }
}

// Backward of sample_into for upstream gradient g[0..n). Returns
// (dot(g, sample), d/du, d/dv) already multiplied by `weight` where relevant,
// and scatters into grad_map when non-null.
std::array<double, 3> sample_backward(const Tensor& map, const Stencil& s,
                                      std::size_t c0, std::size_t n,
                                      double weight, const double* g,
                                      Tensor* grad_map) {
  const std::size_t w = map.dim(1);
  const std::size_t c = map.dim(2);
  const std::size_t i00 = (s.y0 * w + s.x0) * c + c0;
  const std::size_t i01 = (s.y0 * w + s.x1) * c + c0;
  const std::size_t i10 = (s.y1 * w + s.x0) * c + c0;
  const std::size_t i11 = (s.y1 * w + s.x1) * c + c0;
  double dot = 0.0;
  double ddx = 0.0;
  double ddy = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double f00 = map[i00 + j];
    const double f01 = map[i01 + j];
    const double f10 = map[i10 + j];
    const double f11 = map[i11 + j];
    const double val = (1 - s.ax) * (1 - s.ay) * f00 + s.ax * (1 - s.ay) * f01 +
                       (1 - s.ax) * s.ay * f10 + s.ax * s.ay * f11;
    dot += g[j] * val;
    ddx += g[j] * ((1 - s.ay) * (f01 - f00) + s.ay * (f11 - f10));
    ddy += g[j] * ((1 - s.ax) * (f10 - f00) + s.ax * (f11 - f01));
    if (grad_map != nullptr) {
      const double gw = g[j] * weight;
      (*grad_map)[i00 + j] += gw * (1 - s.ax) * (1 - s.ay);
      (*grad_map)[i01 + j] += gw * s.ax * (1 - s.ay);
      (*grad_map)[i10 + j] += gw * (1 - s.ax) * s.ay;
      (*grad_map)[i11 + j] += gw * s.ax * s.ay;
    }
  }
  return {dot, weight * ddx * s.dpx, weight * ddy * s.dpy};
}

}  // namespace

Var bilinear_sample(const Var& feature_map, const Var& uv) {
  const Tensor& map = feature_map.value();
  check_map(map, "bilinear_sample");
  if (uv.value().last_dim() != 2) {
    throw ShapeError("bilinear_sample: uv must be [S, 2]");
  }
  const std::size_t h = map.dim(0);
  const std::size_t w = map.dim(1);
  const std::size_t c = map.dim(2);
  const std::size_t samples = uv.value().rows();
  Tensor out({samples, c});
  for (std::size_t s = 0; s < samples; ++s) {
    const Stencil st = make_stencil(uv.value()[2 * s], uv.value()[2 * s + 1], h, w);
    sample_into(map, st, 0, c, 1.0, out.data() + s * c);
  }
  Node* mn = feature_map.node();
  Node* un = uv.node();
  std::array<Var, 2> parents{feature_map, uv};
  return feature_map.graph().record(
      std::move(out), parents, "bilinear_sample",
      [mn, un, samples, h, w, c](const Tensor& g) {
        Tensor* gm = mn->requires_grad ? &mn->ensure_grad() : nullptr;
        Tensor* gu = un->requires_grad ? &un->ensure_grad() : nullptr;
        for (std::size_t s = 0; s < samples; ++s) {
          const Stencil st =
              make_stencil(un->value[2 * s], un->value[2 * s + 1], h, w);
          const auto d =
              sample_backward(mn->value, st, 0, c, 1.0, g.data() + s * c, gm);
          if (gu) {
            (*gu)[2 * s] += d[1];
            (*gu)[2 * s + 1] += d[2];
          }
        }
      });
}

Var deform_aggregate(std::span<const Var> levels, const Var& uv,
                     const Var& weights) {
  const Tensor& uvv = uv.value();
  const Tensor& wv = weights.value();
  if (levels.empty()) throw ShapeError("deform_aggregate: no levels");
  if (uvv.rank() != 5 || uvv.dim(4) != 2 || wv.rank() != 4) {
    throw ShapeError("deform_aggregate: uv must be [Q,H,L,K,2], weights [Q,H,L,K]");
  }
  const std::size_t q = uvv.dim(0);
  const std::size_t heads = uvv.dim(1);
  const std::size_t nl = uvv.dim(2);
  const std::size_t k = uvv.dim(3);
  if (wv.shape() != Shape{q, heads, nl, k} || nl != levels.size()) {
    throw ShapeError("deform_aggregate: weights/levels do not match uv " +
                     shape_str(uvv.shape()));
  }
  const std::size_t c = levels[0].value().last_dim();
  for (const Var& lv : levels) {
    check_map(lv.value(), "deform_aggregate");
    if (lv.value().dim(2) != c) {
      throw ShapeError("deform_aggregate: channel count differs across levels");
    }
  }
  Tensor out({q, heads, c});
  for (std::size_t qi = 0; qi < q; ++qi) {
    for (std::size_t hi = 0; hi < heads; ++hi) {
      double* orow = out.data() + (qi * heads + hi) * c;
      for (std::size_t li = 0; li < nl; ++li) {
        const Tensor& map = levels[li].value();
        for (std::size_t ki = 0; ki < k; ++ki) {
          const std::size_t idx = ((qi * heads + hi) * nl + li) * k + ki;
          const Stencil st = make_stencil(uvv[2 * idx], uvv[2 * idx + 1],
                                          map.dim(0), map.dim(1));
          sample_into(map, st, 0, c, wv[idx], orow);
        }
      }
    }
  }
  std::vector<Node*> level_nodes;
  std::vector<Var> parents(levels.begin(), levels.end());
  for (const Var& lv : levels) level_nodes.push_back(lv.node());
  parents.push_back(uv);
  parents.push_back(weights);
  Node* un = uv.node();
  Node* wn = weights.node();
  return uv.graph().record(
      std::move(out), parents, "deform_aggregate",
      [level_nodes, un, wn, q, heads, nl, k, c](const Tensor& g) {
        Tensor* gu = un->requires_grad ? &un->ensure_grad() : nullptr;
        Tensor* gw = wn->requires_grad ? &wn->ensure_grad() : nullptr;
        for (std::size_t qi = 0; qi < q; ++qi) {
          for (std::size_t hi = 0; hi < heads; ++hi) {
            const double* grow = g.data() + (qi * heads + hi) * c;
            for (std::size_t li = 0; li < nl; ++li) {
              Node* ln = level_nodes[li];
              const Tensor& map = ln->value;
              Tensor* gm = ln->requires_grad ? &ln->ensure_grad() : nullptr;
              for (std::size_t ki = 0; ki < k; ++ki) {
                const std::size_t idx = ((qi * heads + hi) * nl + li) * k + ki;
                const double weight = wn->value[idx];
                const Stencil st =
                    make_stencil(un->value[2 * idx], un->value[2 * idx + 1],
                                 map.dim(0), map.dim(1));
                const auto d =
                    sample_backward(map, st, 0, c, weight, grow, gm);
                if (gw) (*gw)[idx] += d[0];
                if (gu) {
                  (*gu)[2 * idx] += d[1];
                  (*gu)[2 * idx + 1] += d[2];
                }
              }
            }
          }
        }
      });
}

namespace {

struct AxisInterp {
  std::vector<std::size_t> i0, i1;
  std::vector<double> a;
};

AxisInterp upsample_axis(std::size_t n) {
  AxisInterp t;
  const double nmax = static_cast<double>(n - 1);
  for (std::size_t child = 0; child < 2 * n; ++child) {
    double src = (static_cast<double>(child) + 0.5) / 2.0 - 0.5;
    src = std::clamp(src, 0.0, nmax);
    const auto lo = static_cast<std::size_t>(std::floor(src));
    t.i0.push_back(lo);
    t.i1.push_back(std::min(lo + 1, n - 1));
    t.a.push_back(src - static_cast<double>(lo));
  }
  return t;
}

void check_grid(const Tensor& t, const char* op) {
  if (t.rank() != 4) {
    throw ShapeError(std::string(op) + ": grid must be [X, Y, Z, C], got " +
                     shape_str(t.shape()));
  }
}

}  // namespace

Var trilinear_upsample2(const Var& grid) {
  const Tensor& gv = grid.value();
  check_grid(gv, "trilinear_upsample2");
  const std::size_t nx = gv.dim(0), ny = gv.dim(1), nz = gv.dim(2),
                    c = gv.dim(3);
  auto tx = std::make_shared<AxisInterp>(upsample_axis(nx));
  auto ty = std::make_shared<AxisInterp>(upsample_axis(ny));
  auto tz = std::make_shared<AxisInterp>(upsample_axis(nz));
  Tensor out({2 * nx, 2 * ny, 2 * nz, c});
  auto visit = [=](auto&& fn) {
    for (std::size_t x = 0; x < 2 * nx; ++x) {
      for (std::size_t y = 0; y < 2 * ny; ++y) {
        for (std::size_t z = 0; z < 2 * nz; ++z) {
          const std::size_t o = ((x * 2 * ny + y) * 2 * nz + z) * c;
          const std::size_t xs[2] = {tx->i0[x], tx->i1[x]};
          const std::size_t ys[2] = {ty->i0[y], ty->i1[y]};
          const std::size_t zs[2] = {tz->i0[z], tz->i1[z]};
          const double wx[2] = {1 - tx->a[x], tx->a[x]};
          const double wy[2] = {1 - ty->a[y], ty->a[y]};
          const double wz[2] = {1 - tz->a[z], tz->a[z]};
          for (int a = 0; a < 2; ++a) {
            for (int b = 0; b < 2; ++b) {
              for (int d = 0; d < 2; ++d) {
                const double wt = wx[a] * wy[b] * wz[d];
                if (wt == 0.0) continue;
                const std::size_t i = ((xs[a] * ny + ys[b]) * nz + zs[d]) * c;
                fn(o, i, wt);
              }
            }
          }
        }
      }
    }
  };
  visit([&](std::size_t o, std::size_t i, double wt) {
    for (std::size_t j = 0; j < c; ++j) out[o + j] += wt * gv[i + j];
  });
  Node* gn = grid.node();
  std::array<Var, 1> parents{grid};
  return grid.graph().record(std::move(out), parents, "trilinear_upsample2",
                             [gn, visit, c](const Tensor& g) {
                               Tensor& gg = gn->ensure_grad();
                               visit([&](std::size_t o, std::size_t i, double wt) {
                                 for (std::size_t j = 0; j < c; ++j) {
                                   gg[i + j] += wt * g[o + j];
                                 }
                               });
                             });
}

Var dwconv3d(const Var& grid, const Var& kernel, const Var& bias) {
  const Tensor& gv = grid.value();
  check_grid(gv, "dwconv3d");
  const std::size_t nx = gv.dim(0), ny = gv.dim(1), nz = gv.dim(2),
                    c = gv.dim(3);
  if (kernel.shape() != Shape{3, 3, 3, c}) {
    throw ShapeError("dwconv3d: kernel must be [3,3,3," + std::to_string(c) +
                     "], got " + shape_str(kernel.shape()));
  }
  if (bias && bias.size() != c) throw ShapeError("dwconv3d: bias size");
  auto visit = [=](auto&& fn) {
    for (std::size_t x = 0; x < nx; ++x) {
      for (std::size_t y = 0; y < ny; ++y) {
        for (std::size_t z = 0; z < nz; ++z) {
          const std::size_t o = ((x * ny + y) * nz + z) * c;
          for (int dx = -1; dx <= 1; ++dx) {
            const long sx = static_cast<long>(x) + dx;
            if (sx < 0 || sx >= static_cast<long>(nx)) continue;
            for (int dy = -1; dy <= 1; ++dy) {
              const long sy = static_cast<long>(y) + dy;
              if (sy < 0 || sy >= static_cast<long>(ny)) continue;
              for (int dz = -1; dz <= 1; ++dz) {
                const long sz = static_cast<long>(z) + dz;
                if (sz < 0 || sz >= static_cast<long>(nz)) continue;
                const std::size_t i =
                    ((static_cast<std::size_t>(sx) * ny +
                      static_cast<std::size_t>(sy)) *
                         nz +
                     static_cast<std::size_t>(sz)) *
                    c;
                const std::size_t kk =
                    static_cast<std::size_t>(((dx + 1) * 3 + (dy + 1)) * 3 +
                                             (dz + 1)) *
                    c;
                fn(o, i, kk);
              }
            }
          }
        }
      }
    }
  };
  Tensor out(gv.shape());
  if (bias) {
    for (std::size_t v = 0; v < nx * ny * nz; ++v) {
      for (std::size_t j = 0; j < c; ++j) out[v * c + j] = bias.value()[j];
    }
  }
  const Tensor& kv = kernel.value();
  visit([&](std::size_t o, std::size_t i, std::size_t kk) {
    for (std::size_t j = 0; j < c; ++j) out[o + j] += kv[kk + j] * gv[i + j];
  });
  Node* gn = grid.node();
  Node* kn = kernel.node();
  Node* bn = bias ? bias.node() : nullptr;
  std::array<Var, 3> parents{grid, kernel, bias};
  return grid.graph().record(
      std::move(out), parents, "dwconv3d",
      [gn, kn, bn, visit, c, nvox = nx * ny * nz](const Tensor& g) {
        Tensor* gg = gn->requires_grad ? &gn->ensure_grad() : nullptr;
        Tensor* gk = kn->requires_grad ? &kn->ensure_grad() : nullptr;
        visit([&](std::size_t o, std::size_t i, std::size_t kk) {
          for (std::size_t j = 0; j < c; ++j) {
            if (gg) (*gg)[i + j] += kn->value[kk + j] * g[o + j];
            if (gk) (*gk)[kk + j] += gn->value[i + j] * g[o + j];
          }
        });
        if (bn != nullptr && bn->requires_grad) {
          Tensor& gb = bn->ensure_grad();
          for (std::size_t v = 0; v < nvox; ++v) {
            for (std::size_t j = 0; j < c; ++j) gb[j] += g[v * c + j];
          }
        }
      });
}

Var split_children(const Var& grid) {
  const Tensor& gv = grid.value();
  check_grid(gv, "split_children");
  if (gv.dim(3) % 8 != 0) {
    throw ShapeError("split_children: channels must be a multiple of 8");
  }
  const std::size_t nx = gv.dim(0), ny = gv.dim(1), nz = gv.dim(2),
                    c = gv.dim(3) / 8;
  const Shape out_shape{2 * nx, 2 * ny, 2 * nz, c};
  // Map from output offset to input offset, shared by forward and backward.
  auto index = std::make_shared<std::vector<std::size_t>>(shape_numel(out_shape));
  for (std::size_t x = 0; x < nx; ++x) {
    for (std::size_t y = 0; y < ny; ++y) {
      for (std::size_t z = 0; z < nz; ++z) {
        for (std::size_t child = 0; child < 8; ++child) {
          const std::size_t dx = child >> 2, dy = (child >> 1) & 1, dz = child & 1;
          const std::size_t o =
              (((2 * x + dx) * 2 * ny + (2 * y + dy)) * 2 * nz + (2 * z + dz)) * c;
          const std::size_t i = ((x * ny + y) * nz + z) * 8 * c + child * c;
          for (std::size_t j = 0; j < c; ++j) (*index)[o + j] = i + j;
        }
      }
    }
  }
  Tensor out(out_shape);
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = gv[(*index)[o]];
  Node* gn = grid.node();
  std::array<Var, 1> parents{grid};
  return grid.graph().record(std::move(out), parents, "split_children",
                             [gn, index](const Tensor& g) {
                               Tensor& gg = gn->ensure_grad();
                               for (std::size_t o = 0; o < g.size(); ++o) {
                                 gg[(*index)[o]] += g[o];
                               }
                             });
}

}  // namespace vggtocc::diff
