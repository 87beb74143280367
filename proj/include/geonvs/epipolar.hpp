// Copyright 2026 The geonvs Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "geonvs/camera.hpp"
#include "geonvs/image.hpp"
#include "geonvs/rng.hpp"

namespace geonvs {

struct PosedCamera {
  CameraIntrinsics intr;
  CameraExtrinsics extr;
};

// Depths uniform in inverse depth over [near, far], strictly ascending.
// Deterministic mode includes both endpoints; stratified mode jitters one
// sample per disparity bin using rng. near == far is allowed only for n == 1.
std::vector<double> sample_ray_depths(double near, double far, int n,
                                      bool stratified, Rng* rng);

struct EpipolarProjection {
  Eigen::Vector2d v = Eigen::Vector2d::Zero();
  double depth = 0.0;
  bool valid = false;  // in front of the camera and inside image bounds
};

struct EpipolarSamples {
  std::vector<double> depths;
  std::vector<Eigen::Vector3d> points;
  std::vector<EpipolarProjection> projections;  // into the target view
};

// Ray through u in view_i, sampled at n depths, each projected into view_j.
EpipolarSamples epipolar_projections(const Eigen::Vector2d& u, const PosedCamera& view_i,
                                     const PosedCamera& view_j, int n_samples,
                                     double near, double far, bool stratified,
                                     Rng* rng);

// Lifts p with its ground-truth depth into 3D and projects into view_j.
// Returns the projected pixel iff it lands in front of the camera, inside
// bounds, and its depth agrees with view_j's depth map within eps_rel
// (relative, bilinear lookup by default). Anything else counts as occluded.
std::optional<Eigen::Vector2d> make_positive_pair(
    const Eigen::Vector2d& p, const PosedCamera& view_i, const DepthMap& depth_i,
    const PosedCamera& view_j, const DepthMap& depth_j, double eps_rel = 0.01,
    bool nearest_lookup = false);

// Exactly n_neg in-bounds projections of ray samples through p. Invalid
// projections are re-drawn with fresh stratified depths for up to
// retry_rounds; any remaining deficit is filled by clamping the last draws
// into image bounds.
std::vector<Eigen::Vector2d> make_negative_pairs(const Eigen::Vector2d& p,
                                                 const PosedCamera& view_i,
                                                 const PosedCamera& view_j, int n_neg,
                                                 double near, double far, Rng& rng,
                                                 int retry_rounds = 8);

}  // namespace geonvs
