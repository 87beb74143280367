// Copyright 2026 The geonvs Authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "geonvs/camera.hpp"
#include "geonvs/rng.hpp"
#include "test_util.hpp"

using namespace geonvs;

namespace {

CameraIntrinsics identity_intrinsics() {
  CameraIntrinsics intr;
  intr.K.setIdentity();
  intr.width = 2;
  intr.height = 2;
  return intr;
}

}  // namespace

TEST_CASE("ray_through_pixel: identity camera") {
  const CameraIntrinsics intr = identity_intrinsics();
  const CameraExtrinsics extr;
  const Ray ray = ray_through_pixel({0.0, 0.0}, intr, extr);
  CHECK(ray.origin.norm() == 0.0);
  CHECK((ray.direction - Eigen::Vector3d(0, 0, 1)).norm() == 0.0);
  CHECK_THROWS_AS(ray_through_pixel({2.5, 0.0}, intr, extr), std::invalid_argument);
}

TEST_CASE("ray translation linearity") {
  Rng rng(3);
  const CameraIntrinsics intr = CameraIntrinsics::pinhole(40.0, 64, 48);
  CameraExtrinsics extr = testutil::random_pose(rng);
  const Eigen::Vector2d u(12.3, 30.0);
  const Ray r1 = ray_through_pixel(u, intr, extr);
  const Eigen::Vector3d shift(0.4, -1.2, 2.0);
  extr.t += shift;
  const Ray r2 = ray_through_pixel(u, intr, extr);
  CHECK((r2.at(1.7) - r1.at(1.7) - shift).norm() < 1e-12);
}

TEST_CASE("project_point: identity camera cases") {
  const CameraIntrinsics intr = identity_intrinsics();
  const CameraExtrinsics extr;
  const Projection p = project_point({0, 0, 1}, intr, extr);
  CHECK(p.v.norm() == 0.0);
  CHECK(p.depth == 1.0);
  // point behind the camera
  const Projection q = project_point({0, 0, -0.5}, intr, extr);
  CHECK(q.depth < 0.0);
  // point in the camera plane flagged by |d| < 1e-9
  const Projection r = project_point({0.3, 0.3, 0}, intr, extr);
  CHECK(std::abs(r.depth) < 1e-9);
}

TEST_CASE("projection round-trips over 1000 random poses") {
  Rng rng(17);
  const CameraIntrinsics intr = CameraIntrinsics::pinhole(50.0, 80, 60);
  double worst_px = 0.0, worst_depth = 0.0, worst_p3 = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const CameraExtrinsics extr = testutil::random_pose(rng);
    const Eigen::Vector2d u(rng.uniform(0.0, 80.0), rng.uniform(0.0, 60.0));
    const double delta = rng.uniform(0.2, 9.0);
    // lift then reproject
    const Ray ray = ray_through_pixel(u, intr, extr);
    const Projection proj = project_point(ray.at(delta), intr, extr);
    worst_px = std::max(worst_px, (proj.v - u).norm());
    worst_depth = std::max(worst_depth, std::abs(proj.depth - delta));
    // project a random front point then lift through its pixel
    const Eigen::Vector3d p3 =
        extr.t + extr.R * Eigen::Vector3d(rng.uniform(-1, 1), rng.uniform(-1, 1),
                                          rng.uniform(0.5, 6.0));
    const Projection pr = project_point(p3, intr, extr);
    if (pr.depth > 1e-6 && pixel_in_bounds(pr.v, intr)) {
      const Ray back = ray_through_pixel(pr.v, intr, extr);
      worst_p3 = std::max(worst_p3, (back.at(pr.depth) - p3).norm());
    }
  }
  CHECK(worst_px < 1e-6);
  CHECK(worst_depth < 1e-6);
  CHECK(worst_p3 < 1e-6);
}

TEST_CASE("camera_distance closed forms and metric properties") {
  CameraExtrinsics a, b;
  CHECK(camera_distance(a, a) == 0.0);

  b = a;
  b.t = Eigen::Vector3d(3, 4, 0);
  CHECK(camera_distance(a, b) == doctest::Approx(5.0).epsilon(1e-12));

  CameraExtrinsics c = a;
  c.R = Eigen::AngleAxisd(M_PI, Eigen::Vector3d(1, 1, 0).normalized()).toRotationMatrix();
  CHECK(camera_distance(a, c) == doctest::Approx(M_PI).epsilon(1e-9));

  Rng rng(23);
  for (int i = 0; i < 200; ++i) {
    const CameraExtrinsics p = testutil::random_pose(rng);
    const CameraExtrinsics q = testutil::random_pose(rng);
    const double dpq = camera_distance(p, q);
    CHECK(dpq >= 0.0);
    CHECK(dpq == doctest::Approx(camera_distance(q, p)).epsilon(1e-12));
    CHECK(camera_distance(p, p) == 0.0);
  }
}

TEST_CASE("validation rejects malformed cameras") {
  CameraIntrinsics intr = CameraIntrinsics::pinhole(30.0, 32, 32);
  CHECK_NOTHROW(intr.validate());
  intr.K(1, 0) = 0.1;
  CHECK_THROWS_AS(intr.validate(), std::invalid_argument);

  CameraExtrinsics extr;
  CHECK_NOTHROW(extr.validate());
  extr.R(0, 0) = 2.0;
  CHECK_THROWS_AS(extr.validate(), std::invalid_argument);
}
