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

#pragma once

#include <Eigen/Core>
#include <stdexcept>

namespace vggtocc::geometry {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Jacobian = Eigen::Matrix<double, 2, 3>;

// Points at or closer than this depth (meters) are not projected.
inline constexpr double kZNear = 1e-3;

class DegenerateDepthError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Pinhole camera. `rotation`/`translation` map world to camera coordinates
// (x right, y down, z forward).
struct CameraModel {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  // Throws std::invalid_argument when an invariant is broken.
  void validate() const;
  // Camera centre in world coordinates.
  Vec3 center() const { return -rotation.transpose() * translation; }
};

struct ProjectionResult {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
  Jacobian jacobian = Jacobian::Zero();
  double sigma_min = 0.0;
  bool valid = false;
};

Vec3 world_to_camera(const Vec3& p_world, const CameraModel& cam);

// Normalized pinhole projection of a camera-frame point. The Jacobian is
// w.r.t. camera-frame coordinates and is zero when depth <= kZNear.
ProjectionResult project(const Vec3& p_cam, const CameraModel& cam);

// Analytic d(u, v)/d(X, Y, Z) in normalized image units per meter.
Jacobian projection_jacobian(const Vec3& p_cam, const CameraModel& cam);

// d(u, v)/d(p_world) = J_cam * R.
Jacobian world_jacobian(const Vec3& p_cam, const CameraModel& cam);

// Smaller singular value of a 2×3 matrix from its 2×2 Gram matrix. The
// determinant comes from the three 2×2 minors (Cauchy-Binet), which keeps the
// result accurate when the two singular values are far apart.
double sigma_min(const Jacobian& j);

// d sigma_min(J(p)) / d p_cam for the pinhole Jacobian. Zero when the two
// singular values coincide (not differentiable there) or depth <= kZNear.
Vec3 sigma_min_gradient(const Vec3& p_cam, const CameraModel& cam);

// Inverse of project(): camera-frame point at `depth` behind (u, v).
Vec3 unproject(double u, double v, double depth, const CameraModel& cam);

// Rotation about a unit axis by `angle` radians.
Mat3 axis_angle(const Vec3& axis, double angle);

}  // namespace vggtocc::geometry
