// Copyright 2026 The geonvs Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "geonvs/epipolar.hpp"
#include "geonvs/scene.hpp"

namespace geonvs {

struct CameraView {
  CameraIntrinsics intr;
  CameraExtrinsics extr;
  Image rgb;
  DepthMap depth;

  PosedCamera cam() const { return {intr, extr}; }
};

// One scene plus its rendered views: the unit of training/evaluation data.
struct ScenePack {
  std::string name;
  ProceduralScene scene;
  std::vector<CameraView> views;
};

// Ray bounds for a pack: 0.5%/99.5% percentiles of all finite ground-truth
// depths, padded by 5%.
struct DepthBounds {
  double near = 0.1;
  double far = 10.0;
};
DepthBounds depth_bounds(const ScenePack& pack);

// Generates a scene, selects views, and renders ground truth.
ScenePack build_scene_pack(std::uint64_t scene_seed, int n_primitives,
                           const CameraIntrinsics& intr, const ViewSelectConfig& view_cfg,
                           Rng& rng, const std::string& name);

// Nuisance-noise transform standing in for real captures: extrinsics jitter,
// Gaussian image noise, per-view illumination gain. Depth maps and the true
// render stay aligned with the *unjittered* pose, so the stored pose is
// slightly wrong on purpose.
struct RealishParams {
  double pose_sigma = 0.005;     // rad / world units
  double pixel_sigma = 2.0 / 255.0;
  double gain_jitter = 0.10;
};
ScenePack make_realish(const ScenePack& clean, const RealishParams& params, Rng& rng);

// Directory layout: scene.json, cam_XXXX.json, rgb_XXXX.png, depth_XXXX.dpt.
void save_scene_pack(const std::string& dir, const ScenePack& pack);
ScenePack load_scene_pack(const std::string& dir);
// Loads every scene_* subdirectory of root, sorted by name.
std::vector<ScenePack> load_scene_packs(const std::string& root);

}  // namespace geonvs
