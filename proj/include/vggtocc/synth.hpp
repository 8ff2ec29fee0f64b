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

// Procedural scenes, surround rigs and deterministic feature rendering.
//
// Features stand in for a frozen image encoder: every pixel ray is marched
// through the label grid and the first occupied voxel's class, inverse depth
// and ray direction are embedded by a fixed seeded linear map.

#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "vggtocc/geometry.hpp"
#include "vggtocc/objective.hpp"
#include "vggtocc/tensor.hpp"

namespace vggtocc::synth {

using geometry::CameraModel;
using objective::LabelGrid;

struct Primitive {
  enum class Kind { kBox, kSphere };
  Kind kind = Kind::kBox;
  std::array<double, 3> center{};
  // Full side lengths for boxes; extents[0] is the diameter for spheres.
  std::array<double, 3> extents{1.0, 1.0, 1.0};
  std::uint8_t class_id = 2;
};

struct SceneSpec {
  std::uint64_t seed = 0;
  std::array<double, 3> lower{-5.0, -5.0, 0.0};
  std::array<double, 3> upper{5.0, 5.0, 2.0};
  decoder::GridDims dims{20, 20, 4};
  std::size_t n_classes = 5;
  // Class of the bottom voxel layer; 0 disables the ground.
  std::uint8_t ground_class = 1;
  std::vector<Primitive> primitives;

  void validate() const;
};

// Random scene parameters.
struct SceneParams {
  std::size_t min_primitives = 4;
  std::size_t max_primitives = 8;
  double min_size = 0.6;
  double max_size = 2.5;
  // Primitives keep their centres at least this far from the rig axis.
  double keep_out = 1.5;
};

// Draws a scene on the given grid. Object classes are 2 .. n_classes - 1.
SceneSpec random_scene(std::uint64_t seed, const SceneSpec& grid,
                       const SceneParams& params = {});

// Voxel centres inside a primitive take its class, later primitives winning;
// otherwise the bottom layer is ground; otherwise free.
LabelGrid voxelize(const SceneSpec& scene);

struct RigSpec {
  std::size_t n_cameras = 6;
  double radius = 0.3;
  double height = 1.0;
  // Added to the evenly spaced yaws 2 pi i / n.
  double yaw_offset = 0.0;
  int width = 48;
  int height_px = 32;
  double hfov_deg = 90.0;
  // Feature pyramid resolutions (height, width).
  std::vector<std::array<std::size_t, 2>> levels{{32, 48}, {16, 24}};
  std::size_t feature_dim = 32;

  void validate() const;
};

// Outward-looking pinhole cameras evenly spaced on a horizontal ring.
std::vector<CameraModel> make_rig(const RigSpec& rig);

// Rotates every camera about its centre by `degrees` around a random axis.
std::vector<CameraModel> corrupt_extrinsics(const std::vector<CameraModel>& cams,
                                            double degrees, std::uint64_t seed);

struct Hit {
  std::uint8_t class_id = 0;  // 0 when the ray leaves the grid
  double depth = 0.0;         // camera z of the entry point
  geometry::Vec3 direction = geometry::Vec3::Zero();  // unit, world frame
};

// First occupied voxel along the ray through the centre of each pixel of an
// h x w image, row-major.
std::vector<Hit> render_hits(const SceneSpec& scene, const LabelGrid& labels,
                             const CameraModel& cam, std::size_t h, std::size_t w);

// Fixed random linear embedding of hits.
class FeatureEmbedding {
 public:
  FeatureEmbedding(std::size_t n_classes, std::size_t feature_dim, std::uint64_t seed);
  std::size_t feature_dim() const { return dim_; }
  // Writes the feature of `hit` into out[0 .. feature_dim).
  void embed(const Hit& hit, double* out) const;

 private:
  std::size_t n_classes_;
  std::size_t dim_;
  Tensor weight_;      // [n_classes + 4, feature_dim]
  Tensor background_;  // [feature_dim]
};

// [h, w, feature_dim] feature map.
Tensor render_features(const SceneSpec& scene, const LabelGrid& labels,
                       const CameraModel& cam, std::size_t h, std::size_t w,
                       const FeatureEmbedding& embedding);

struct Sample {
  SceneSpec scene;
  std::array<LabelGrid, 3> labels;  // coarse first
  std::vector<CameraModel> cameras;
  // features[camera][level], [H_l, W_l, feature_dim]
  std::vector<std::vector<Tensor>> features;
};

enum class Split { kTrain, kVal };

struct DatasetSpec {
  std::uint64_t seed = 0;
  std::size_t n_scenes = 8;
  SceneSpec grid;
  SceneParams scene;
  RigSpec rig;
  std::uint64_t embed_seed = 7;
};

// Scene seeds are interleaved so the splits never share one.
std::uint64_t scene_seed(const DatasetSpec& spec, Split split, std::size_t index);

Sample make_sample(const DatasetSpec& spec, Split split, std::size_t index);
std::vector<Sample> make_dataset(const DatasetSpec& spec, Split split);

// Scene files mirror SceneSpec as JSON.
std::string scene_to_json(const SceneSpec& scene);
SceneSpec scene_from_json(const std::string& text);

}  // namespace vggtocc::synth
