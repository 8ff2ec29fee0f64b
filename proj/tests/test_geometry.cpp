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

#include <Eigen/SVD>
#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "vggtocc/geometry.hpp"

using namespace vggtocc::geometry;

namespace {

CameraModel square_camera() {
  CameraModel cam;
  cam.fx = cam.fy = 100;
  cam.cx = cam.cy = 50;
  cam.width = cam.height = 100;
  return cam;
}

}  // namespace

TEST_CASE("world_to_camera applies R p + t") {
  CameraModel cam;
  CHECK((world_to_camera({1, 2, 3}, cam) - Vec3(1, 2, 3)).norm() == 0.0);
  cam.rotation = axis_angle(Vec3::UnitZ(), std::numbers::pi / 2);
  CHECK((world_to_camera({1, 0, 0}, cam) - Vec3(0, 1, 0)).norm() < 1e-15);
  cam.rotation = Mat3::Identity();
  cam.translation = {0, 0, -5};
  CHECK((world_to_camera({0, 0, 10}, cam) - Vec3(0, 0, 5)).norm() == 0.0);
}

TEST_CASE("project follows the normalized pinhole model") {
  const CameraModel cam = square_camera();
  auto r = project({0, 0, 10}, cam);
  CHECK(r.u == doctest::Approx(0.5));
  CHECK(r.v == doctest::Approx(0.5));
  CHECK(r.depth == 10.0);
  CHECK(r.valid);
  CHECK(r.sigma_min > 0.0);

  r = project({1, 0, 10}, cam);
  CHECK(r.u == doctest::Approx(0.6).epsilon(1e-14));
  CHECK(r.v == doctest::Approx(0.5).epsilon(1e-14));

  r = project({0, 0, -1}, cam);
  CHECK_FALSE(r.valid);
  CHECK(r.jacobian.isZero(0.0));

  r = project({100, 0, 10}, cam);  // in front but outside the image
  CHECK_FALSE(r.valid);
  CHECK(r.sigma_min > 0.0);
}

TEST_CASE("projection_jacobian analytic values") {
  const CameraModel cam = square_camera();
  Jacobian expected;
  expected << 0.1, 0, 0, 0, 0.1, 0;
  CHECK((projection_jacobian({0, 0, 10}, cam) - expected).cwiseAbs().maxCoeff() <
        1e-15);
  const Jacobian far = projection_jacobian({0, 0, 20}, cam);
  CHECK((far - 0.5 * expected).cwiseAbs().maxCoeff() < 1e-15);
  CHECK_THROWS_AS(projection_jacobian({0, 0, 0}, cam), DegenerateDepthError);
  CHECK_THROWS_AS(projection_jacobian({0, 0, 1e-3}, cam), DegenerateDepthError);
}

TEST_CASE("projection_jacobian matches central differences on random points") {
  std::mt19937_64 rng(7);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const CameraModel cam = oracle::random_camera(rng);
    const Vec3 p = oracle::random_point_in_front(rng);
    const Jacobian j = projection_jacobian(p, cam);
    const Jacobian fd = oracle::fd_projection_jacobian(p, cam, 1e-5);
    worst = std::max(worst, (j - fd).cwiseAbs().maxCoeff() / j.cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("sigma_min closed form") {
  Jacobian j;
  j << 0.1, 0, 0, 0, 0.1, 0;
  CHECK(sigma_min(j) == doctest::Approx(0.1).epsilon(1e-15));

  CameraModel cam;
  cam.fx = cam.fy = 500;
  cam.width = cam.height = 1000;
  cam.cx = cam.cy = 500;
  const double s = sigma_min(projection_jacobian({0, 0, 25}, cam));
  CHECK(std::abs(s - 0.02) < 1e-15);
  CHECK(std::abs(s - oracle::svd_sigma_min(projection_jacobian({0, 0, 25}, cam))) <
        1e-15);

  Jacobian rank1;
  rank1 << 1, 2, 3, 2, 4, 6;
  CHECK(sigma_min(rank1) == 0.0);
  CHECK(sigma_min(Jacobian::Zero()) == 0.0);
}

TEST_CASE("sigma_min agrees with a generic SVD on random cameras") {
  std::mt19937_64 rng(11);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const CameraModel cam = oracle::random_camera(rng);
    const Vec3 p = oracle::random_point_in_front(rng);
    const Jacobian j = world_jacobian(p, cam);
    const double ref = oracle::svd_sigma_min(j);
    worst = std::max(worst, std::abs(sigma_min(j) - ref) / ref);
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("sigma_min is frame invariant") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const CameraModel cam = oracle::random_camera(rng);
    const Vec3 p = oracle::random_point_in_front(rng);
    const Jacobian jc = projection_jacobian(p, cam);
    const double a = sigma_min(jc);
    const double b = sigma_min(jc * oracle::random_rotation(rng));
    CHECK(std::abs(a - b) < 1e-10 * a);
  }
}

TEST_CASE("sigma_min decreases with depth along a ray") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const CameraModel cam = oracle::random_camera(rng);
    const Vec3 dir = oracle::random_point_in_front(rng).normalized();
    double prev = std::numeric_limits<double>::infinity();
    for (double t = 0.5; t < 80.0; t *= 1.3) {
      const double s = sigma_min(projection_jacobian(t * dir, cam));
      CHECK(s < prev);
      prev = s;
    }
  }
}

TEST_CASE("on-axis sigma_min equals f_norm / Z") {
  for (double z : {0.5, 1.0, 3.7, 10.0, 55.0}) {
    CameraModel cam;
    cam.fx = 480;
    cam.width = 640;
    cam.fy = 360;
    cam.height = 480;  // fx/W == fy/H == 0.75
    cam.cx = 320;
    cam.cy = 240;
    const double s = sigma_min(projection_jacobian({0, 0, z}, cam));
    CHECK(std::abs(s - 0.75 / z) < 1e-12);
  }
}

TEST_CASE("sigma_min_gradient matches finite differences") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const CameraModel cam = oracle::random_camera(rng);
    const Vec3 p = oracle::random_point_in_front(rng);
    const Vec3 g = sigma_min_gradient(p, cam);
    for (int k = 0; k < 3; ++k) {
      Vec3 hp = p, hm = p;
      const double h = 1e-6;
      hp(k) += h;
      hm(k) -= h;
      const double fd = (sigma_min(projection_jacobian(hp, cam)) -
                         sigma_min(projection_jacobian(hm, cam))) /
                        (2 * h);
      CHECK(std::abs(g(k) - fd) <= 1e-6 * std::max(1.0, g.cwiseAbs().maxCoeff()) +
                                       1e-5 * std::abs(fd));
    }
  }
}

TEST_CASE("unproject inverts project") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    const CameraModel cam = oracle::random_camera(rng);
    const Vec3 p = oracle::random_point_in_front(rng);
    const auto r = project(p, cam);
    CHECK((unproject(r.u, r.v, r.depth, cam) - p).norm() < 1e-9);
  }
}

TEST_CASE("camera validation") {
  CameraModel cam = square_camera();
  CHECK_NOTHROW(cam.validate());
  cam.fx = 0;
  CHECK_THROWS(cam.validate());
  cam = square_camera();
  cam.rotation = -Mat3::Identity();
  CHECK_THROWS(cam.validate());
  cam = square_camera();
  cam.width = 0;
  CHECK_THROWS(cam.validate());
}
