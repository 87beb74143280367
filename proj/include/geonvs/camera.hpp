// Copyright 2026 The geonvs Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

namespace geonvs {

// Pinhole intrinsics. K is upper-triangular with positive diagonal and the
// principal point inside the image. Pixel (col,row) covers
// [col,col+1)x[row,row+1); its sample point is (col+0.5, row+0.5).
struct CameraIntrinsics {
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
  int width = 0;
  int height = 0;

  static CameraIntrinsics pinhole(double focal, int width, int height);
  Eigen::Matrix3d K_inv() const { return K.inverse(); }
  void validate() const;
};

// Camera-to-world pose: R rotates camera axes into world axes, t is the
// camera center in world coordinates. Camera convention: x right, y down,
// z forward (depth axis).
struct CameraExtrinsics {
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();

  void validate() const;
  // Pose with camera at `center` looking along `forward` (world z-up).
  static CameraExtrinsics look_along(const Eigen::Vector3d& center,
                                     const Eigen::Vector3d& forward);
};

struct Ray {
  Eigen::Vector3d origin;     // camera center
  Eigen::Vector3d direction;  // R * K^-1 * [u, v, 1], deliberately unnormalized
  Eigen::Vector3d at(double delta) const { return origin + delta * direction; }
};

// Throws std::invalid_argument if u lies outside [0,W)x[0,H).
Ray ray_through_pixel(const Eigen::Vector2d& u, const CameraIntrinsics& intr,
                      const CameraExtrinsics& extr);

struct Projection {
  Eigen::Vector2d v = Eigen::Vector2d::Zero();
  double depth = 0.0;  // signed; <=0 means behind or in the camera plane
};

// d [v,1]^T = K R^-1 (p - t). For |d| < 1e-9 the pixel is undefined and v is
// left at zero; callers must reject via the depth.
Projection project_point(const Eigen::Vector3d& p, const CameraIntrinsics& intr,
                         const CameraExtrinsics& extr);

inline bool pixel_in_bounds(const Eigen::Vector2d& v, const CameraIntrinsics& intr) {
  return v.x() >= 0.0 && v.x() < intr.width && v.y() >= 0.0 && v.y() < intr.height;
}

// ||t1 - t2|| + arccos((Tr(R2^T R1) - 1) / 2), argument clamped to [-1,1].
double camera_distance(const CameraExtrinsics& a, const CameraExtrinsics& b);

}  // namespace geonvs
