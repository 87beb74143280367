// Copyright 2026 The geonvs Authors
// SPDX-License-Identifier: Apache-2.0
#include "geonvs/scene_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <stdexcept>

namespace geonvs {

namespace fs = std::filesystem;
using nlohmann::json;

DepthBounds depth_bounds(const ScenePack& pack) {
  std::vector<double> finite;
  for (const CameraView& view : pack.views)
    for (double d : view.depth.data)
      if (std::isfinite(d)) finite.push_back(d);
  if (finite.empty())
    throw std::runtime_error("depth_bounds: pack '" + pack.name +
                             "' has no finite ground-truth depth");
  std::sort(finite.begin(), finite.end());
  auto quantile = [&finite](double q) {
    const double pos = q * (static_cast<double>(finite.size()) - 1.0);
    const std::size_t i = static_cast<std::size_t>(pos);
    const std::size_t j = std::min(i + 1, finite.size() - 1);
    const double frac = pos - static_cast<double>(i);
    return finite[i] * (1.0 - frac) + finite[j] * frac;
  };
  DepthBounds b;
  b.near = std::max(1e-3, quantile(0.005) * 0.95);
  b.far = quantile(0.995) * 1.05;
  if (b.far <= b.near) b.far = b.near * 2.0;
  return b;
}

ScenePack build_scene_pack(std::uint64_t scene_seed, int n_primitives,
                           const CameraIntrinsics& intr, const ViewSelectConfig& view_cfg,
                           Rng& rng, const std::string& name) {
  ScenePack pack;
  pack.name = name;
  pack.scene = generate_scene(scene_seed, n_primitives);
  const std::vector<CameraExtrinsics> poses =
      select_views(pack.scene, intr, view_cfg, default_pose_sampler(pack.scene), rng);
  pack.views.reserve(poses.size());
  for (const CameraExtrinsics& extr : poses) {
    CameraView view;
    view.intr = intr;
    view.extr = extr;
    render_ground_truth(pack.scene, intr, extr, &view.rgb, &view.depth);
    pack.views.push_back(std::move(view));
  }
  return pack;
}

namespace {

Eigen::Matrix3d small_rotation(double rx, double ry, double rz) {
  Eigen::Vector3d axis(rx, ry, rz);
  const double angle = axis.norm();
  if (angle < 1e-15) return Eigen::Matrix3d::Identity();
  return Eigen::AngleAxisd(angle, axis / angle).toRotationMatrix();
}

}  // namespace

ScenePack make_realish(const ScenePack& clean, const RealishParams& params, Rng& rng) {
  ScenePack noisy = clean;
  noisy.name = clean.name + "_realish";
  for (CameraView& view : noisy.views) {
    const Eigen::Matrix3d dR =
        small_rotation(params.pose_sigma * rng.normal(), params.pose_sigma * rng.normal(),
                       params.pose_sigma * rng.normal());
    view.extr.R = dR * view.extr.R;
    for (int a = 0; a < 3; ++a) view.extr.t[a] += params.pose_sigma * rng.normal();
    const double gain = 1.0 + params.gain_jitter * rng.uniform(-1.0, 1.0);
    for (double& v : view.rgb.data) {
      v = gain * v + params.pixel_sigma * rng.normal();
      v = std::min(1.0, std::max(0.0, v));
    }
  }
  return noisy;
}

namespace {

json vec3_to_json(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

Eigen::Vector3d vec3_from_json(const json& j) {
  return Eigen::Vector3d(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>());
}

json mat3_to_json(const Eigen::Matrix3d& m) {
  json out = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out.push_back(m(r, c));
  return out;
}

Eigen::Matrix3d mat3_from_json(const json& j) {
  Eigen::Matrix3d m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = j.at(static_cast<std::size_t>(r * 3 + c)).get<double>();
  return m;
}

std::string view_suffix(std::size_t idx) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04zu", idx);
  return buf;
}

}  // namespace

void save_scene_pack(const std::string& dir, const ScenePack& pack) {
  fs::create_directories(dir);
  json scene_j;
  scene_j["seed"] = pack.scene.seed;
  scene_j["room_lo"] = vec3_to_json(pack.scene.room_lo);
  scene_j["room_hi"] = vec3_to_json(pack.scene.room_hi);
  scene_j["has_walls"] = pack.scene.has_walls;
  scene_j["wall_albedo"] = vec3_to_json(pack.scene.wall_albedo);
  json prims = json::array();
  for (const Primitive& prim : pack.scene.primitives) {
    json p;
    if (const auto* box = std::get_if<BoxPrimitive>(&prim)) {
      p["type"] = "box";
      p["lo"] = vec3_to_json(box->lo);
      p["hi"] = vec3_to_json(box->hi);
      p["albedo"] = vec3_to_json(box->albedo);
    } else if (const auto* sph = std::get_if<SpherePrimitive>(&prim)) {
      p["type"] = "sphere";
      p["center"] = vec3_to_json(sph->center);
      p["radius"] = sph->radius;
      p["albedo"] = vec3_to_json(sph->albedo);
    }
    prims.push_back(p);
  }
  scene_j["primitives"] = prims;
  scene_j["n_views"] = pack.views.size();
  std::ofstream(dir + "/scene.json") << scene_j.dump(2) << "\n";

  for (std::size_t i = 0; i < pack.views.size(); ++i) {
    const CameraView& view = pack.views[i];
    const std::string sfx = view_suffix(i);
    json cam_j;
    cam_j["K"] = mat3_to_json(view.intr.K);
    cam_j["R"] = mat3_to_json(view.extr.R);
    cam_j["t"] = vec3_to_json(view.extr.t);
    cam_j["width"] = view.intr.width;
    cam_j["height"] = view.intr.height;
    std::ofstream(dir + "/cam_" + sfx + ".json") << cam_j.dump(2) << "\n";
    write_png(dir + "/rgb_" + sfx + ".png", view.rgb);
    write_depth(dir + "/depth_" + sfx + ".dpt", view.depth);
  }
}

ScenePack load_scene_pack(const std::string& dir) {
  std::ifstream scene_f(dir + "/scene.json");
  if (!scene_f) throw std::runtime_error("load_scene_pack: missing " + dir + "/scene.json");
  json scene_j = json::parse(scene_f);

  ScenePack pack;
  pack.name = fs::path(dir).filename().string();
  pack.scene.seed = scene_j.at("seed").get<std::uint64_t>();
  pack.scene.room_lo = vec3_from_json(scene_j.at("room_lo"));
  pack.scene.room_hi = vec3_from_json(scene_j.at("room_hi"));
  pack.scene.has_walls = scene_j.at("has_walls").get<bool>();
  pack.scene.wall_albedo = vec3_from_json(scene_j.at("wall_albedo"));
  for (const json& p : scene_j.at("primitives")) {
    if (p.at("type") == "box") {
      BoxPrimitive box;
      box.lo = vec3_from_json(p.at("lo"));
      box.hi = vec3_from_json(p.at("hi"));
      box.albedo = vec3_from_json(p.at("albedo"));
      pack.scene.primitives.emplace_back(box);
    } else if (p.at("type") == "sphere") {
      SpherePrimitive sph;
      sph.center = vec3_from_json(p.at("center"));
      sph.radius = p.at("radius").get<double>();
      sph.albedo = vec3_from_json(p.at("albedo"));
      pack.scene.primitives.emplace_back(sph);
    } else {
      throw std::runtime_error("load_scene_pack: unknown primitive type in " + dir);
    }
  }

  const std::size_t n_views = scene_j.at("n_views").get<std::size_t>();
  for (std::size_t i = 0; i < n_views; ++i) {
    const std::string sfx = view_suffix(i);
    std::ifstream cam_f(dir + "/cam_" + sfx + ".json");
    if (!cam_f)
      throw std::runtime_error("load_scene_pack: missing cam_" + sfx + ".json in " + dir);
    json cam_j = json::parse(cam_f);
    CameraView view;
    view.intr.K = mat3_from_json(cam_j.at("K"));
    view.intr.width = cam_j.at("width").get<int>();
    view.intr.height = cam_j.at("height").get<int>();
    view.extr.R = mat3_from_json(cam_j.at("R"));
    view.extr.t = vec3_from_json(cam_j.at("t"));
    view.rgb = read_png(dir + "/rgb_" + sfx + ".png");
    view.depth = read_depth(dir + "/depth_" + sfx + ".dpt");
    pack.views.push_back(std::move(view));
  }
  return pack;
}

std::vector<ScenePack> load_scene_packs(const std::string& root) {
  std::vector<std::string> dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && entry.path().filename().string().rfind("scene_", 0) == 0)
      dirs.push_back(entry.path().string());
  }
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty())
    throw std::runtime_error("load_scene_packs: no scene_* directories under " + root);
  std::vector<ScenePack> packs;
  packs.reserve(dirs.size());
  for (const std::string& d : dirs) packs.push_back(load_scene_pack(d));
  return packs;
}

}  // namespace geonvs
