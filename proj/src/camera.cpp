// Copyright 2026 The geonvs Authors
// SPDX-License-Identifier: Apache-2.0
#include "geonvs/camera.hpp"

#include <cmath>
#include <stdexcept>

namespace geonvs {

CameraIntrinsics CameraIntrinsics::pinhole(double focal, int width, int height) {
  CameraIntrinsics intr;
  intr.K << focal, 0, 0.5 * width, 0, focal, 0.5 * height, 0, 0, 1;
  intr.width = width;
  intr.height = height;
  return intr;
}

void CameraIntrinsics::validate() const {
  if (width <= 0 || height <= 0)
    throw std::invalid_argument("intrinsics: non-positive image size");
  if (K(1, 0) != 0.0 || K(2, 0) != 0.0 || K(2, 1) != 0.0)
    throw std::invalid_argument("intrinsics: K not upper-triangular");
  if (K(0, 0) <= 0.0 || K(1, 1) <= 0.0 || K(2, 2) <= 0.0)
    throw std::invalid_argument("intrinsics: K diagonal not positive");
  const double cx = K(0, 2), cy = K(1, 2);
  if (cx < 0 || cx > width || cy < 0 || cy > height)
    throw std::invalid_argument("intrinsics: principal point outside image");
}

void CameraExtrinsics::validate() const {
  const double ortho = (R.transpose() * R - Eigen::Matrix3d::Identity()).norm();
  if (ortho > 1e-6) throw std::invalid_argument("extrinsics: R not orthonormal");
  if (std::abs(R.determinant() - 1.0) > 1e-6)
    throw std::invalid_argument("extrinsics: det(R) != 1");
}

CameraExtrinsics CameraExtrinsics::look_along(const Eigen::Vector3d& center,
                                              const Eigen::Vector3d& forward) {
  const Eigen::Vector3d up(0, 0, 1);
  Eigen::Vector3d f = forward.normalized();
  Eigen::Vector3d right = f.cross(up);
  if (right.norm() < 1e-9) right = Eigen::Vector3d(1, 0, 0);  // looking straight up/down
  right.normalize();
  const Eigen::Vector3d down = f.cross(right);
  CameraExtrinsics extr;
  extr.R.col(0) = right;
  extr.R.col(1) = down;
  extr.R.col(2) = f;
  extr.t = center;
  return extr;
}

Ray ray_through_pixel(const Eigen::Vector2d& u, const CameraIntrinsics& intr,
                      const CameraExtrinsics& extr) {
  if (!pixel_in_bounds(u, intr))
    throw std::invalid_argument("ray_through_pixel: pixel out of bounds");
  Ray ray;
  ray.origin = extr.t;
  ray.direction = extr.R * (intr.K_inv() * Eigen::Vector3d(u.x(), u.y(), 1.0));
  return ray;
}

Projection project_point(const Eigen::Vector3d& p, const CameraIntrinsics& intr,
                         const CameraExtrinsics& extr) {
  const Eigen::Vector3d h = intr.K * (extr.R.transpose() * (p - extr.t));
  Projection proj;
  proj.depth = h.z();
  if (std::abs(h.z()) >= 1e-9) proj.v = h.head<2>() / h.z();
  return proj;
}

double camera_distance(const CameraExtrinsics& a, const CameraExtrinsics& b) {
  // acos near 1 turns coefficient-level roundoff into ~1e-8 distances, so
  // bitwise-equal rotations short-circuit to an exact zero angle.
  double angle = 0.0;
  if (a.R != b.R) {
    const double trace = (b.R.transpose() * a.R).trace();
    const double arg = std::min(1.0, std::max(-1.0, (trace - 1.0) / 2.0));
    angle = std::acos(arg);
  }
  return (a.t - b.t).norm() + angle;
}

}  // namespace geonvs
