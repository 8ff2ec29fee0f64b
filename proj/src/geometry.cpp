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

#include "vggtocc/geometry.hpp"

#include <Eigen/Geometry>
#include <cmath>

namespace vggtocc::geometry {

void CameraModel::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw std::invalid_argument("camera focal lengths must be positive");
  }
  if (width < 1 || height < 1) {
    throw std::invalid_argument("camera image size must be at least 1x1");
  }
  const Mat3 err = rotation.transpose() * rotation - Mat3::Identity();
  if (err.cwiseAbs().maxCoeff() >= 1e-10 || rotation.determinant() <= 0.0) {
    throw std::invalid_argument("camera rotation is not a proper rotation");
  }
}

Vec3 world_to_camera(const Vec3& p_world, const CameraModel& cam) {
  return cam.rotation * p_world + cam.translation;
}

ProjectionResult project(const Vec3& p_cam, const CameraModel& cam) {
  ProjectionResult r;
  r.depth = p_cam.z();
  if (r.depth <= kZNear) return r;
  const double w = cam.width;
  const double h = cam.height;
  r.u = (cam.fx * p_cam.x() / r.depth + cam.cx) / w;
  r.v = (cam.fy * p_cam.y() / r.depth + cam.cy) / h;
  r.jacobian = projection_jacobian(p_cam, cam);
  r.sigma_min = sigma_min(r.jacobian);
  r.valid = r.u >= 0.0 && r.u <= 1.0 && r.v >= 0.0 && r.v <= 1.0;
  return r;
}

Jacobian projection_jacobian(const Vec3& p_cam, const CameraModel& cam) {
  const double z = p_cam.z();
  if (z <= kZNear) {
    throw DegenerateDepthError("projection Jacobian requested at depth " +
                               std::to_string(z));
  }
  const double a = cam.fx / cam.width;
  const double b = cam.fy / cam.height;
  Jacobian j;
  j << a / z, 0.0, -a * p_cam.x() / (z * z),  //
      0.0, b / z, -b * p_cam.y() / (z * z);
  return j;
}

Jacobian world_jacobian(const Vec3& p_cam, const CameraModel& cam) {
  return projection_jacobian(p_cam, cam) * cam.rotation;
}

namespace {

struct Gram {
  double a, b, c;   // [[a, b], [b, c]]
  double det;       // sum of squared 2x2 minors
  double lmax, lmin;
};

Gram gram(const Jacobian& j) {
  Gram g{};
  g.a = j.row(0).squaredNorm();
  g.c = j.row(1).squaredNorm();
  g.b = j.row(0).dot(j.row(1));
  const double m01 = j(0, 0) * j(1, 1) - j(0, 1) * j(1, 0);
  const double m02 = j(0, 0) * j(1, 2) - j(0, 2) * j(1, 0);
  const double m12 = j(0, 1) * j(1, 2) - j(0, 2) * j(1, 1);
  g.det = m01 * m01 + m02 * m02 + m12 * m12;
  g.lmax = 0.5 * (g.a + g.c) + std::hypot(0.5 * (g.a - g.c), g.b);
  g.lmin = g.lmax > 0.0 ? g.det / g.lmax : 0.0;
  return g;
}

}  // namespace

double sigma_min(const Jacobian& j) {
  const Gram g = gram(j);
  if (!(g.det > 0.0)) return 0.0;
  return std::sqrt(g.lmin);
}

Vec3 sigma_min_gradient(const Vec3& p_cam, const CameraModel& cam) {
  const double z = p_cam.z();
  if (z <= kZNear) return Vec3::Zero();
  const Jacobian j = projection_jacobian(p_cam, cam);
  const Gram g = gram(j);
  const double sigma = std::sqrt(g.lmin);
  if (!(sigma > 0.0) || g.lmax - g.lmin <= 1e-15 * g.lmax) return Vec3::Zero();
  // Unit eigenvector of the Gram matrix for lmin.
  Eigen::Vector2d e1(g.b, g.lmin - g.a);
  Eigen::Vector2d e2(g.lmin - g.c, g.b);
  Eigen::Vector2d e = e1.squaredNorm() >= e2.squaredNorm() ? e1 : e2;
  e.normalize();
  const Eigen::RowVector3d w = e.transpose() * j;  // (J^T e)^T
  const double a = cam.fx / cam.width;
  const double b = cam.fy / cam.height;
  const double x = p_cam.x();
  const double y = p_cam.y();
  // dJ/dX, dJ/dY, dJ/dZ.
  Jacobian dx, dy, dz;
  dx << 0, 0, -a / (z * z), 0, 0, 0;
  dy << 0, 0, 0, 0, 0, -b / (z * z);
  dz << -a / (z * z), 0, 2 * a * x / (z * z * z),  //
      0, -b / (z * z), 2 * b * y / (z * z * z);
  Vec3 grad;
  const Jacobian* parts[3] = {&dx, &dy, &dz};
  for (int k = 0; k < 3; ++k) {
    // d(lambda) = 2 e^T dJ J^T e ; d(sigma) = d(lambda) / (2 sigma)
    const double dl = 2.0 * (e.transpose() * (*parts[k])).dot(w);
    grad(k) = dl / (2.0 * sigma);
  }
  return grad;
}

Vec3 unproject(double u, double v, double depth, const CameraModel& cam) {
  const double x = (u * cam.width - cam.cx) * depth / cam.fx;
  const double y = (v * cam.height - cam.cy) * depth / cam.fy;
  return {x, y, depth};
}

Mat3 axis_angle(const Vec3& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

}  // namespace vggtocc::geometry
