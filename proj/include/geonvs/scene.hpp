// Copyright 2026 The geonvs Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <variant>
#include <vector>

#include "geonvs/camera.hpp"
#include "geonvs/image.hpp"
#include "geonvs/rng.hpp"

namespace geonvs {

inline const Eigen::Vector3d kBackgroundColor(0.5, 0.5, 0.5);

struct BoxPrimitive {
  Eigen::Vector3d lo, hi;
  Eigen::Vector3d albedo;
};

struct SpherePrimitive {
  Eigen::Vector3d center;
  double radius = 0.0;
  Eigen::Vector3d albedo;
};

using Primitive = std::variant<BoxPrimitive, SpherePrimitive>;

// Indoor-like scene: an axis-aligned room (optionally with visible walls)
// containing diffuse boxes and spheres. Fully determined by its fields; the
// same seed always regenerates the same scene.
struct ProceduralScene {
  std::vector<Primitive> primitives;
  Eigen::Vector3d room_lo = Eigen::Vector3d(-3, -3, 0);
  Eigen::Vector3d room_hi = Eigen::Vector3d(3, 3, 2.7);
  bool has_walls = false;
  Eigen::Vector3d wall_albedo = Eigen::Vector3d(0.75, 0.73, 0.7);
  std::uint64_t seed = 0;

  double room_diagonal() const { return (room_hi - room_lo).norm(); }
};

// Throws on n_primitives < 1. Deterministic in seed.
ProceduralScene generate_scene(std::uint64_t seed, int n_primitives);

struct SceneHit {
  bool hit = false;
  double delta = 0.0;  // ray parameter (depth when the ray comes from a pixel)
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  Eigen::Vector3d normal = Eigen::Vector3d::Zero();
  Eigen::Vector3d albedo = Eigen::Vector3d::Zero();
};

// First intersection with delta > delta_min; walls (room interior faces)
// count as geometry when scene.has_walls.
SceneHit raycast(const ProceduralScene& scene, const Ray& ray, double delta_min = 1e-9);

// Distance from a point to the nearest scene surface (used by tests to
// verify depth round-trips).
double surface_distance(const ProceduralScene& scene, const Eigen::Vector3d& p);

// Lambertian shading under a fixed directional light; view independent.
Eigen::Vector3d shade(const SceneHit& hit);

// Analytic RGB-D render. Misses get kBackgroundColor and +inf depth; depth is
// the ray parameter delta of the first hit (z-depth for pixel rays).
void render_ground_truth(const ProceduralScene& scene, const CameraIntrinsics& intr,
                         const CameraExtrinsics& extr, Image* image, DepthMap* depth);

// Monte-Carlo frustum IoU with a fixed internal point set: deterministic,
// symmetric, exactly 1 on identical frustums and 0 on disjoint ones.
// Throws on invalid depth range.
double frustum_overlap(const CameraExtrinsics& e1, const CameraExtrinsics& e2,
                       const CameraIntrinsics& intr, double near, double far,
                       int n_samples = 32768);

struct ViewSelectConfig {
  int n_views = 200;
  double min_overlap = 0.3;   // T_o
  double min_distance = 0.2;  // T_d
  double near = 0.1;
  double far = 0.0;  // <=0: room diagonal
  int max_proposals = 100000;
  int overlap_samples = 8192;
};

using PoseSampler = std::function<CameraExtrinsics(Rng&)>;

// Uniform position in an eye-height band of the room, uniform yaw, small
// pitch jitter.
PoseSampler default_pose_sampler(const ProceduralScene& scene);

// Iterative view selection: the first proposal is always accepted; each later
// proposal is accepted iff its max frustum overlap with the accepted set is
// >= min_overlap and its min camera_distance is >= min_distance. Throws with
// a diagnostic if max_proposals is exhausted first.
std::vector<CameraExtrinsics> select_views(const ProceduralScene& scene,
                                           const CameraIntrinsics& intr,
                                           const ViewSelectConfig& cfg,
                                           const PoseSampler& sampler, Rng& rng);

}  // namespace geonvs
