// Copyright 2026 The geonvs Authors
// SPDX-License-Identifier: Apache-2.0
#include "geonvs/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace geonvs {

namespace {

const Eigen::Vector3d kLightDir = Eigen::Vector3d(0.3, -0.25, -1.0).normalized();
constexpr double kAmbient = 0.35;
constexpr double kDiffuse = 0.65;

struct SlabHit {
  bool hit = false;
  double t_enter = 0.0, t_exit = 0.0;
  int enter_axis = 0, exit_axis = 0;
};

SlabHit ray_aabb(const Ray& ray, const Eigen::Vector3d& lo, const Eigen::Vector3d& hi) {
  SlabHit out;
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  int a0 = 0, a1 = 0;
  for (int a = 0; a < 3; ++a) {
    const double o = ray.origin[a], d = ray.direction[a];
    if (std::abs(d) < 1e-15) {
      if (o < lo[a] || o > hi[a]) return out;
      continue;
    }
    double ta = (lo[a] - o) / d, tb = (hi[a] - o) / d;
    if (ta > tb) std::swap(ta, tb);
    if (ta > t0) {
      t0 = ta;
      a0 = a;
    }
    if (tb < t1) {
      t1 = tb;
      a1 = a;
    }
    if (t0 > t1) return out;
  }
  out.hit = true;
  out.t_enter = t0;
  out.t_exit = t1;
  out.enter_axis = a0;
  out.exit_axis = a1;
  return out;
}

Eigen::Vector3d axis_normal(int axis, double dir_component) {
  Eigen::Vector3d n = Eigen::Vector3d::Zero();
  n[axis] = dir_component > 0 ? -1.0 : 1.0;  // face the incoming ray
  return n;
}

bool sphere_hit(const Ray& ray, const SpherePrimitive& s, double delta_min, double* delta) {
  const Eigen::Vector3d oc = ray.origin - s.center;
  const double a = ray.direction.squaredNorm();
  const double b = 2.0 * oc.dot(ray.direction);
  const double c = oc.squaredNorm() - s.radius * s.radius;
  const double disc = b * b - 4 * a * c;
  if (disc < 0) return false;
  const double sq = std::sqrt(disc);
  const double t1 = (-b - sq) / (2 * a);
  const double t2 = (-b + sq) / (2 * a);
  if (t1 > delta_min) {
    *delta = t1;
    return true;
  }
  if (t2 > delta_min) {
    *delta = t2;
    return true;
  }
  return false;
}

}  // namespace

ProceduralScene generate_scene(std::uint64_t seed, int n_primitives) {
  if (n_primitives < 1)
    throw std::invalid_argument("generate_scene: n_primitives must be >= 1");
  Rng rng(seed ^ 0xA5CEA5CEULL);
  ProceduralScene scene;
  scene.seed = seed;
  const double hx = rng.uniform(2.2, 3.2);
  const double hy = rng.uniform(2.2, 3.2);
  const double hz = rng.uniform(2.4, 3.0);
  scene.room_lo = Eigen::Vector3d(-hx, -hy, 0.0);
  scene.room_hi = Eigen::Vector3d(hx, hy, hz);
  scene.has_walls = true;
  scene.wall_albedo =
      Eigen::Vector3d(rng.uniform(0.6, 0.85), rng.uniform(0.6, 0.85), rng.uniform(0.6, 0.85));

  auto albedo = [&rng]() {
    return Eigen::Vector3d(rng.uniform(0.1, 0.95), rng.uniform(0.1, 0.95),
                           rng.uniform(0.1, 0.95));
  };
  for (int i = 0; i < n_primitives; ++i) {
    if (rng.uniform() < 0.5) {
      BoxPrimitive box;
      const Eigen::Vector3d half(rng.uniform(0.15, 0.7), rng.uniform(0.15, 0.7),
                                 rng.uniform(0.15, 0.9));
      Eigen::Vector3d center;
      for (int a = 0; a < 3; ++a)
        center[a] = rng.uniform(scene.room_lo[a] + half[a] + 0.05,
                                scene.room_hi[a] - half[a] - 0.05);
      if (rng.uniform() < 0.6) center.z() = half.z();  // floor-standing
      box.lo = center - half;
      box.hi = center + half;
      box.albedo = albedo();
      scene.primitives.emplace_back(box);
    } else {
      SpherePrimitive s;
      s.radius = rng.uniform(0.12, 0.55);
      for (int a = 0; a < 3; ++a)
        s.center[a] = rng.uniform(scene.room_lo[a] + s.radius + 0.05,
                                  scene.room_hi[a] - s.radius - 0.05);
      s.albedo = albedo();
      scene.primitives.emplace_back(s);
    }
  }
  return scene;
}

SceneHit raycast(const ProceduralScene& scene, const Ray& ray, double delta_min) {
  SceneHit best;
  double best_delta = std::numeric_limits<double>::infinity();

  for (const Primitive& prim : scene.primitives) {
    if (const auto* box = std::get_if<BoxPrimitive>(&prim)) {
      const SlabHit sh = ray_aabb(ray, box->lo, box->hi);
      if (!sh.hit) continue;
      double delta;
      int axis;
      if (sh.t_enter > delta_min) {
        delta = sh.t_enter;
        axis = sh.enter_axis;
      } else if (sh.t_exit > delta_min) {
        delta = sh.t_exit;
        axis = sh.exit_axis;
      } else {
        continue;
      }
      if (delta < best_delta) {
        best_delta = delta;
        best.hit = true;
        best.delta = delta;
        best.point = ray.at(delta);
        best.normal = axis_normal(axis, ray.direction[axis]);
        best.albedo = box->albedo;
      }
    } else if (const auto* sph = std::get_if<SpherePrimitive>(&prim)) {
      double delta;
      if (!sphere_hit(ray, *sph, delta_min, &delta)) continue;
      if (delta < best_delta) {
        best_delta = delta;
        best.hit = true;
        best.delta = delta;
        best.point = ray.at(delta);
        best.normal = (best.point - sph->center).normalized();
        best.albedo = sph->albedo;
      }
    }
  }

  if (scene.has_walls) {
    const SlabHit sh = ray_aabb(ray, scene.room_lo, scene.room_hi);
    if (sh.hit) {
      // From inside the room the exit face is the visible wall; from outside
      // the entry face is.
      double delta = 0.0;
      int axis = 0;
      bool ok = false;
      if (sh.t_enter > delta_min) {
        delta = sh.t_enter;
        axis = sh.enter_axis;
        ok = true;
      } else if (sh.t_exit > delta_min) {
        delta = sh.t_exit;
        axis = sh.exit_axis;
        ok = true;
      }
      if (ok && delta < best_delta) {
        best.hit = true;
        best.delta = delta;
        best.point = ray.at(delta);
        best.normal = axis_normal(axis, ray.direction[axis]);
        best.albedo = scene.wall_albedo;
      }
    }
  }
  return best;
}

double surface_distance(const ProceduralScene& scene, const Eigen::Vector3d& p) {
  double best = std::numeric_limits<double>::infinity();
  auto aabb_surface = [&p](const Eigen::Vector3d& lo, const Eigen::Vector3d& hi) {
    Eigen::Vector3d clamped = p.cwiseMax(lo).cwiseMin(hi);
    const double outside = (p - clamped).norm();
    if (outside > 0) return outside;
    double inside = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a)
      inside = std::min({inside, p[a] - lo[a], hi[a] - p[a]});
    return inside;
  };
  for (const Primitive& prim : scene.primitives) {
    if (const auto* box = std::get_if<BoxPrimitive>(&prim))
      best = std::min(best, aabb_surface(box->lo, box->hi));
    else if (const auto* sph = std::get_if<SpherePrimitive>(&prim))
      best = std::min(best, std::abs((p - sph->center).norm() - sph->radius));
  }
  if (scene.has_walls) best = std::min(best, aabb_surface(scene.room_lo, scene.room_hi));
  return best;
}

Eigen::Vector3d shade(const SceneHit& hit) {
  const double lambert = std::max(0.0, hit.normal.dot(-kLightDir));
  Eigen::Vector3d c = hit.albedo * (kAmbient + kDiffuse * lambert);
  return c.cwiseMin(1.0).cwiseMax(0.0);
}

void render_ground_truth(const ProceduralScene& scene, const CameraIntrinsics& intr,
                         const CameraExtrinsics& extr, Image* image, DepthMap* depth) {
  intr.validate();
  extr.validate();
  if (image) *image = Image(intr.width, intr.height);
  if (depth) *depth = DepthMap(intr.width, intr.height);
  for (int y = 0; y < intr.height; ++y) {
    for (int x = 0; x < intr.width; ++x) {
      const Ray ray =
          ray_through_pixel(Eigen::Vector2d(x + 0.5, y + 0.5), intr, extr);
      const SceneHit hit = raycast(scene, ray);
      if (hit.hit) {
        if (image) image->set_pixel(y, x, shade(hit));
        if (depth) depth->at(y, x) = hit.delta;
      } else if (image) {
        image->set_pixel(y, x, kBackgroundColor);
      }
    }
  }
}

namespace {

bool in_frustum(const Eigen::Vector3d& p, const CameraIntrinsics& intr,
                const CameraExtrinsics& extr, double near, double far) {
  const Projection proj = project_point(p, intr, extr);
  return proj.depth >= near && proj.depth <= far && proj.v.x() >= 0.0 &&
         proj.v.x() <= intr.width && proj.v.y() >= 0.0 && proj.v.y() <= intr.height;
}

void extend_frustum_aabb(const CameraIntrinsics& intr, const CameraExtrinsics& extr,
                         double near, double far, Eigen::Vector3d* lo,
                         Eigen::Vector3d* hi) {
  const Eigen::Matrix3d kinv = intr.K_inv();
  const double W = intr.width, H = intr.height;
  const Eigen::Vector2d corners[4] = {{0, 0}, {W, 0}, {0, H}, {W, H}};
  for (double d : {near, far}) {
    for (const auto& c : corners) {
      const Eigen::Vector3d p =
          extr.t + d * (extr.R * (kinv * Eigen::Vector3d(c.x(), c.y(), 1.0)));
      *lo = lo->cwiseMin(p);
      *hi = hi->cwiseMax(p);
    }
  }
}

}  // namespace

double frustum_overlap(const CameraExtrinsics& e1, const CameraExtrinsics& e2,
                       const CameraIntrinsics& intr, double near, double far,
                       int n_samples) {
  if (!(near > 0.0) || !(far > near))
    throw std::invalid_argument("frustum_overlap: need 0 < near < far");
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector3d hi = -lo;
  extend_frustum_aabb(intr, e1, near, far, &lo, &hi);
  extend_frustum_aabb(intr, e2, near, far, &lo, &hi);

  Rng rng(0x5EEDF00DCAFEULL);  // fixed: same point set for every call
  long inter = 0, uni = 0;
  for (int i = 0; i < n_samples; ++i) {
    Eigen::Vector3d p;
    for (int a = 0; a < 3; ++a) p[a] = rng.uniform(lo[a], hi[a]);
    const bool a = in_frustum(p, intr, e1, near, far);
    const bool b = in_frustum(p, intr, e2, near, far);
    inter += (a && b) ? 1 : 0;
    uni += (a || b) ? 1 : 0;
  }
  if (uni == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

PoseSampler default_pose_sampler(const ProceduralScene& scene) {
  const Eigen::Vector3d lo = scene.room_lo, hi = scene.room_hi;
  return [lo, hi](Rng& rng) {
    const double margin = 0.25;
    const double height = hi.z() - lo.z();
    Eigen::Vector3d center(rng.uniform(lo.x() + margin, hi.x() - margin),
                           rng.uniform(lo.y() + margin, hi.y() - margin),
                           lo.z() + height * rng.uniform(0.45, 0.65));
    const double yaw = rng.uniform(0.0, 2.0 * M_PI);
    const double pitch = rng.uniform(-0.25, 0.25);
    const Eigen::Vector3d forward(std::cos(yaw) * std::cos(pitch),
                                  std::sin(yaw) * std::cos(pitch), -std::sin(pitch));
    return CameraExtrinsics::look_along(center, forward);
  };
}

std::vector<CameraExtrinsics> select_views(const ProceduralScene& scene,
                                           const CameraIntrinsics& intr,
                                           const ViewSelectConfig& cfg,
                                           const PoseSampler& sampler, Rng& rng) {
  const double far = cfg.far > 0.0 ? cfg.far : scene.room_diagonal();
  std::vector<CameraExtrinsics> accepted;
  accepted.reserve(static_cast<std::size_t>(cfg.n_views));
  int proposals = 0;
  while (static_cast<int>(accepted.size()) < cfg.n_views) {
    if (proposals >= cfg.max_proposals)
      throw std::runtime_error(
          "select_views: proposal budget exhausted (" + std::to_string(proposals) +
          " proposals, " + std::to_string(accepted.size()) + "/" +
          std::to_string(cfg.n_views) + " views accepted); relax thresholds");
    ++proposals;
    const CameraExtrinsics cand = sampler(rng);
    if (accepted.empty()) {
      accepted.push_back(cand);
      continue;
    }
    double dist = std::numeric_limits<double>::infinity();
    for (const auto& prev : accepted)
      dist = std::min(dist, camera_distance(cand, prev));
    if (dist < cfg.min_distance) continue;
    bool overlap_ok = false;
    for (const auto& prev : accepted) {
      if (frustum_overlap(cand, prev, intr, cfg.near, far, cfg.overlap_samples) >=
          cfg.min_overlap) {
        overlap_ok = true;
        break;
      }
    }
    if (overlap_ok) accepted.push_back(cand);
  }
  return accepted;
}

}  // namespace geonvs
