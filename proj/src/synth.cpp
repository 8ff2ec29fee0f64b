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

#include "vggtocc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "vggtocc/params.hpp"

namespace vggtocc::synth {
namespace {

using geometry::Mat3;
using geometry::Vec3;

// Same mapping as the parameter initializers, so streams match everywhere.
double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

std::size_t uniform_int(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
}

bool inside(const Primitive& p, const Vec3& x) {
  const Vec3 d(x.x() - p.center[0], x.y() - p.center[1], x.z() - p.center[2]);
  if (p.kind == Primitive::Kind::kSphere) {
    const double r = 0.5 * p.extents[0];
    return d.squaredNorm() <= r * r;
  }
  return std::abs(d.x()) <= 0.5 * p.extents[0] && std::abs(d.y()) <= 0.5 * p.extents[1] &&
         std::abs(d.z()) <= 0.5 * p.extents[2];
}

std::array<double, 3> pitch_of(const SceneSpec& s) {
  return {(s.upper[0] - s.lower[0]) / double(s.dims.x),
          (s.upper[1] - s.lower[1]) / double(s.dims.y),
          (s.upper[2] - s.lower[2]) / double(s.dims.z)};
}

}  // namespace

void SceneSpec::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (!(upper[a] > lower[a])) throw std::invalid_argument("scene: empty bounds");
  }
  if (dims.count() == 0) throw std::invalid_argument("scene: empty grid");
  if (n_classes < 2 || n_classes > 255) throw std::invalid_argument("scene: bad class count");
  if (ground_class >= n_classes) throw std::invalid_argument("scene: bad ground class");
  for (const auto& p : primitives) {
    if (p.class_id == 0 || p.class_id >= n_classes) {
      throw std::invalid_argument("scene: primitive class out of range");
    }
    for (int a = 0; a < 3; ++a) {
      if (p.center[a] < lower[a] || p.center[a] > upper[a]) {
        throw std::invalid_argument("scene: primitive outside bounds");
      }
      if (!(p.extents[a] > 0.0)) throw std::invalid_argument("scene: bad extents");
    }
  }
}

SceneSpec random_scene(std::uint64_t seed, const SceneSpec& grid, const SceneParams& params) {
  SceneSpec s = grid;
  s.seed = seed;
  s.primitives.clear();
  if (s.n_classes < 3) {
    s.validate();
    return s;
  }
  std::mt19937_64 rng(seed);
  const std::size_t n = uniform_int(rng, params.min_primitives, params.max_primitives);
  const double floor_z = s.ground_class != 0 ? s.lower[2] + pitch_of(s)[2] : s.lower[2];
  for (std::size_t i = 0; i < n; ++i) {
    Primitive p;
    p.kind = uniform01(rng) < 0.7 ? Primitive::Kind::kBox : Primitive::Kind::kSphere;
    p.class_id = static_cast<std::uint8_t>(uniform_int(rng, 2, s.n_classes - 1));
    for (double& e : p.extents) e = uniform(rng, params.min_size, params.max_size);
    if (p.kind == Primitive::Kind::kSphere) p.extents[1] = p.extents[2] = p.extents[0];
    const double height = std::min(p.extents[2], s.upper[2] - floor_z);
    p.extents[2] = height;
    double x = 0.0, y = 0.0;
    for (int attempt = 0;; ++attempt) {
      if (attempt == 1000) throw std::invalid_argument("scene: keep-out covers the grid");
      x = uniform(rng, s.lower[0], s.upper[0]);
      y = uniform(rng, s.lower[1], s.upper[1]);
      if (std::hypot(x, y) >= params.keep_out) break;
    }
    p.center = {x, y, floor_z + 0.5 * height};
    s.primitives.push_back(p);
  }
  s.validate();
  return s;
}

LabelGrid voxelize(const SceneSpec& scene) {
  scene.validate();
  const auto p = pitch_of(scene);
  const auto& d = scene.dims;
  LabelGrid out{d, objective::Labels(d.count(), objective::kFree)};
  for (std::size_t x = 0; x < d.x; ++x)
    for (std::size_t y = 0; y < d.y; ++y)
      for (std::size_t z = 0; z < d.z; ++z) {
        const Vec3 c(scene.lower[0] + (double(x) + 0.5) * p[0],
                     scene.lower[1] + (double(y) + 0.5) * p[1],
                     scene.lower[2] + (double(z) + 0.5) * p[2]);
        std::uint8_t label = z == 0 ? scene.ground_class : objective::kFree;
        for (const auto& prim : scene.primitives) {
          if (inside(prim, c)) label = prim.class_id;
        }
        out.data[(x * d.y + y) * d.z + z] = label;
      }
  return out;
}

void RigSpec::validate() const {
  if (n_cameras == 0) throw std::invalid_argument("rig: need at least one camera");
  if (width <= 0 || height_px <= 0) throw std::invalid_argument("rig: bad image size");
  if (!(hfov_deg > 0.0 && hfov_deg < 180.0)) throw std::invalid_argument("rig: bad fov");
  if (levels.empty() || feature_dim == 0) throw std::invalid_argument("rig: bad levels");
  for (const auto& l : levels) {
    if (l[0] == 0 || l[1] == 0) throw std::invalid_argument("rig: empty level");
  }
}

std::vector<CameraModel> make_rig(const RigSpec& rig) {
  rig.validate();
  const double f = 0.5 * rig.width / std::tan(0.5 * rig.hfov_deg * std::numbers::pi / 180.0);
  std::vector<CameraModel> cams;
  for (std::size_t i = 0; i < rig.n_cameras; ++i) {
    const double psi = rig.yaw_offset + 2.0 * std::numbers::pi * double(i) / double(rig.n_cameras);
    CameraModel cam;
    cam.width = rig.width;
    cam.height = rig.height_px;
    cam.fx = f;
    cam.fy = f;
    cam.cx = 0.5 * rig.width;
    cam.cy = 0.5 * rig.height_px;
    // Rows: image right, image down, optical axis.
    cam.rotation << std::sin(psi), -std::cos(psi), 0.0,  //
        0.0, 0.0, -1.0,                                  //
        std::cos(psi), std::sin(psi), 0.0;
    const Vec3 c(rig.radius * std::cos(psi), rig.radius * std::sin(psi), rig.height);
    cam.translation = -cam.rotation * c;
    cam.validate();
    cams.push_back(cam);
  }
  return cams;
}

std::vector<CameraModel> corrupt_extrinsics(const std::vector<CameraModel>& cams,
                                            double degrees, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<CameraModel> out;
  for (const auto& cam : cams) {
    Vec3 axis;
    do {
      axis = Vec3(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
    } while (axis.norm() < 1e-3 || axis.norm() > 1.0);
    const Vec3 c = cam.center();
    CameraModel m = cam;
    m.rotation = cam.rotation * geometry::axis_angle(axis, degrees * std::numbers::pi / 180.0);
    m.translation = -m.rotation * c;
    out.push_back(m);
  }
  return out;
}

std::vector<Hit> render_hits(const SceneSpec& scene, const LabelGrid& labels,
                             const CameraModel& cam, std::size_t h, std::size_t w) {
  if (labels.dims != scene.dims || labels.data.size() != scene.dims.count()) {
    throw ShapeError("render: label grid does not match the scene");
  }
  const auto p = pitch_of(scene);
  const std::array<std::size_t, 3> n{scene.dims.x, scene.dims.y, scene.dims.z};
  const Vec3 origin = cam.center();
  const Mat3 rt = cam.rotation.transpose();
  const Vec3 axis = cam.rotation.row(2).transpose();
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<Hit> hits(h * w);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const double u = (double(j) + 0.5) / double(w);
      const double v = (double(i) + 0.5) / double(h);
      const Vec3 dc((u * cam.width - cam.cx) / cam.fx, (v * cam.height - cam.cy) / cam.fy, 1.0);
      const Vec3 dir = (rt * dc).normalized();
      Hit& hit = hits[i * w + j];
      hit.direction = dir;
      // Slab intersection with the grid box.
      double t0 = 0.0, t1 = kInf;
      for (int a = 0; a < 3; ++a) {
        if (dir[a] == 0.0) {
          if (origin[a] < scene.lower[a] || origin[a] > scene.upper[a]) t1 = -1.0;
          continue;
        }
        double ta = (scene.lower[a] - origin[a]) / dir[a];
        double tb = (scene.upper[a] - origin[a]) / dir[a];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
      }
      if (t1 < t0) continue;
      // Grid traversal from the entry point.
      std::array<long, 3> idx{};
      std::array<long, 3> step{};
      std::array<double, 3> t_max{}, t_delta{};
      const Vec3 entry = origin + t0 * dir;
      for (int a = 0; a < 3; ++a) {
        const double rel = (entry[a] - scene.lower[a]) / p[a];
        idx[a] = std::clamp(static_cast<long>(std::floor(rel)), 0L, static_cast<long>(n[a]) - 1);
        if (dir[a] > 0.0) {
          step[a] = 1;
          t_max[a] = (scene.lower[a] + double(idx[a] + 1) * p[a] - origin[a]) / dir[a];
          t_delta[a] = p[a] / dir[a];
        } else if (dir[a] < 0.0) {
          step[a] = -1;
          t_max[a] = (scene.lower[a] + double(idx[a]) * p[a] - origin[a]) / dir[a];
          t_delta[a] = -p[a] / dir[a];
        } else {
          t_max[a] = kInf;
          t_delta[a] = kInf;
        }
      }
      double t = t0;
      while (true) {
        const std::uint8_t lab =
            labels.data[(std::size_t(idx[0]) * n[1] + std::size_t(idx[1])) * n[2] +
                        std::size_t(idx[2])];
        if (lab != objective::kFree) {
          hit.class_id = lab;
          hit.depth = (t * dir).dot(axis);
          break;
        }
        const int a = t_max[0] < t_max[1] ? (t_max[0] < t_max[2] ? 0 : 2)
                                          : (t_max[1] < t_max[2] ? 1 : 2);
        if (t_max[a] > t1) break;
        t = t_max[a];
        idx[a] += step[a];
        if (idx[a] < 0 || idx[a] >= static_cast<long>(n[a])) break;
        t_max[a] += t_delta[a];
      }
    }
  }
  return hits;
}

FeatureEmbedding::FeatureEmbedding(std::size_t n_classes, std::size_t feature_dim,
                                   std::uint64_t seed)
    : n_classes_(n_classes), dim_(feature_dim) {
  std::mt19937_64 rng(seed);
  weight_ = diff::uniform({n_classes + 4, feature_dim}, -1.0, 1.0, rng);
  background_ = diff::uniform({feature_dim}, -1.0, 1.0, rng);
}

void FeatureEmbedding::embed(const Hit& hit, double* out) const {
  if (hit.class_id == objective::kFree) {
    std::copy_n(background_.data(), dim_, out);
    return;
  }
  if (hit.class_id >= n_classes_) throw std::invalid_argument("embed: class out of range");
  const double inv_depth = hit.depth > 0.0 ? 1.0 / hit.depth : 0.0;
  const double* wc = weight_.data() + hit.class_id * dim_;
  const double* wd = weight_.data() + n_classes_ * dim_;
  for (std::size_t k = 0; k < dim_; ++k) {
    out[k] = wc[k] + inv_depth * wd[k] + hit.direction.x() * wd[dim_ + k] +
             hit.direction.y() * wd[2 * dim_ + k] + hit.direction.z() * wd[3 * dim_ + k];
  }
}

Tensor render_features(const SceneSpec& scene, const LabelGrid& labels, const CameraModel& cam,
                       std::size_t h, std::size_t w, const FeatureEmbedding& embedding) {
  const auto hits = render_hits(scene, labels, cam, h, w);
  const std::size_t c = embedding.feature_dim();
  Tensor out({h, w, c});
  for (std::size_t i = 0; i < hits.size(); ++i) embedding.embed(hits[i], out.data() + i * c);
  return out;
}

std::uint64_t scene_seed(const DatasetSpec& spec, Split split, std::size_t index) {
  return spec.seed * 0x100000000ULL + 2 * index + (split == Split::kVal ? 1 : 0);
}

Sample make_sample(const DatasetSpec& spec, Split split, std::size_t index) {
  Sample s;
  s.scene = random_scene(scene_seed(spec, split, index), spec.grid, spec.scene);
  const LabelGrid fine = voxelize(s.scene);
  s.labels = objective::label_pyramid(fine, s.scene.n_classes);
  s.cameras = make_rig(spec.rig);
  const FeatureEmbedding emb(s.scene.n_classes, spec.rig.feature_dim, spec.embed_seed);
  for (const auto& cam : s.cameras) {
    std::vector<Tensor> levels;
    for (const auto& l : spec.rig.levels) {
      Tensor f = render_features(s.scene, fine, cam, l[0], l[1], emb);
      // Stored features are f32; rounding here makes in-memory and on-disk
      // datasets identical.
      for (double& v : f.vec()) v = static_cast<float>(v);
      levels.push_back(std::move(f));
    }
    s.features.push_back(std::move(levels));
  }
  return s;
}

std::vector<Sample> make_dataset(const DatasetSpec& spec, Split split) {
  std::vector<Sample> out;
  out.reserve(spec.n_scenes);
  for (std::size_t i = 0; i < spec.n_scenes; ++i) out.push_back(make_sample(spec, split, i));
  return out;
}

std::string scene_to_json(const SceneSpec& scene) {
  nlohmann::ordered_json j;
  j["seed"] = scene.seed;
  j["lower"] = scene.lower;
  j["upper"] = scene.upper;
  j["dims"] = {scene.dims.x, scene.dims.y, scene.dims.z};
  j["n_classes"] = scene.n_classes;
  j["ground_class"] = scene.ground_class;
  j["primitives"] = nlohmann::ordered_json::array();
  for (const auto& p : scene.primitives) {
    j["primitives"].push_back({{"kind", p.kind == Primitive::Kind::kBox ? "box" : "sphere"},
                               {"center", p.center},
                               {"extents", p.extents},
                               {"class_id", p.class_id}});
  }
  return j.dump(2) + "\n";
}

SceneSpec scene_from_json(const std::string& text) {
  SceneSpec s;
  try {
    const auto j = nlohmann::json::parse(text);
    s.seed = j.at("seed").get<std::uint64_t>();
    s.lower = j.at("lower").get<std::array<double, 3>>();
    s.upper = j.at("upper").get<std::array<double, 3>>();
    const auto d = j.at("dims").get<std::array<std::size_t, 3>>();
    s.dims = {d[0], d[1], d[2]};
    s.n_classes = j.at("n_classes").get<std::size_t>();
    s.ground_class = j.at("ground_class").get<std::uint8_t>();
    for (const auto& pj : j.at("primitives")) {
      Primitive p;
      const std::string kind = pj.at("kind").get<std::string>();
      if (kind == "box") {
        p.kind = Primitive::Kind::kBox;
      } else if (kind == "sphere") {
        p.kind = Primitive::Kind::kSphere;
      } else {
        throw std::invalid_argument("scene: unknown primitive kind '" + kind + "'");
      }
      p.center = pj.at("center").get<std::array<double, 3>>();
      p.extents = pj.at("extents").get<std::array<double, 3>>();
      p.class_id = pj.at("class_id").get<std::uint8_t>();
      s.primitives.push_back(p);
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("scene: ") + e.what());
  }
  s.validate();
  return s;
}

}  // namespace vggtocc::synth
