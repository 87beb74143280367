// Copyright 2026 The geonvs Authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <variant>

#include "geonvs/scene.hpp"
#include "geonvs/scene_io.hpp"
#include "test_util.hpp"

using namespace geonvs;

namespace {

bool scenes_identical(const ProceduralScene& a, const ProceduralScene& b) {
  if (a.primitives.size() != b.primitives.size()) return false;
  if (a.room_lo != b.room_lo || a.room_hi != b.room_hi) return false;
  for (std::size_t i = 0; i < a.primitives.size(); ++i) {
    if (a.primitives[i].index() != b.primitives[i].index()) return false;
    if (const auto* ba = std::get_if<BoxPrimitive>(&a.primitives[i])) {
      const auto* bb = std::get_if<BoxPrimitive>(&b.primitives[i]);
      if (ba->lo != bb->lo || ba->hi != bb->hi || ba->albedo != bb->albedo) return false;
    } else {
      const auto* sa = std::get_if<SpherePrimitive>(&a.primitives[i]);
      const auto* sb = std::get_if<SpherePrimitive>(&b.primitives[i]);
      if (sa->center != sb->center || sa->radius != sb->radius ||
          sa->albedo != sb->albedo)
        return false;
    }
  }
  return true;
}

bool inside(const Eigen::Vector3d& p, const Eigen::Vector3d& lo, const Eigen::Vector3d& hi) {
  return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
}

// Independent Monte-Carlo IoU with its own rng, for cross-checking the
// implementation's fixed-point-set estimate.
double mc_iou_oracle(const CameraExtrinsics& e1, const CameraExtrinsics& e2,
                     const CameraIntrinsics& intr, double near, double far, int n,
                     Rng& rng) {
  auto in_frustum = [&](const Eigen::Vector3d& p, const CameraExtrinsics& e) {
    const Projection proj = project_point(p, intr, e);
    return proj.depth >= near && proj.depth <= far && proj.v.x() >= 0 &&
           proj.v.x() <= intr.width && proj.v.y() >= 0 && proj.v.y() <= intr.height;
  };
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(1e30), hi = -lo;
  const Eigen::Matrix3d kinv = intr.K_inv();
  for (const CameraExtrinsics* e : {&e1, &e2}) {
    for (double d : {near, far}) {
      for (const Eigen::Vector2d& c :
           {Eigen::Vector2d(0, 0), Eigen::Vector2d(intr.width, 0),
            Eigen::Vector2d(0, intr.height), Eigen::Vector2d(intr.width, intr.height)}) {
        const Eigen::Vector3d p =
            e->t + d * (e->R * (kinv * Eigen::Vector3d(c.x(), c.y(), 1)));
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
      }
    }
  }
  long inter = 0, uni = 0;
  for (int i = 0; i < n; ++i) {
    Eigen::Vector3d p;
    for (int a = 0; a < 3; ++a) p[a] = rng.uniform(lo[a], hi[a]);
    const bool a = in_frustum(p, e1), b = in_frustum(p, e2);
    inter += (a && b);
    uni += (a || b);
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace

TEST_CASE("generate_scene: determinism, seed sensitivity, containment") {
  CHECK_THROWS_AS(generate_scene(0, 0), std::invalid_argument);

  const ProceduralScene one = generate_scene(0, 1);
  CHECK(one.primitives.size() == 1);

  const ProceduralScene a = generate_scene(0, 5);
  const ProceduralScene b = generate_scene(0, 5);
  CHECK(scenes_identical(a, b));

  const ProceduralScene c = generate_scene(1, 5);
  CHECK_FALSE(scenes_identical(a, c));

  for (const Primitive& prim : a.primitives) {
    if (const auto* box = std::get_if<BoxPrimitive>(&prim)) {
      CHECK(inside(box->lo, a.room_lo, a.room_hi));
      CHECK(inside(box->hi, a.room_lo, a.room_hi));
      CHECK((box->hi - box->lo).minCoeff() > 0.0);
    } else if (const auto* sph = std::get_if<SpherePrimitive>(&prim)) {
      CHECK(sph->radius > 0.0);
      CHECK(inside(sph->center - Eigen::Vector3d::Constant(sph->radius), a.room_lo, a.room_hi));
      CHECK(inside(sph->center + Eigen::Vector3d::Constant(sph->radius), a.room_lo, a.room_hi));
    }
  }
}

TEST_CASE("render_ground_truth: sphere depth and background") {
  ProceduralScene scene;
  scene.has_walls = false;
  SpherePrimitive sph;
  sph.center = Eigen::Vector3d(0, 0, 5);
  sph.radius = 1.0;
  sph.albedo = Eigen::Vector3d(0.8, 0.2, 0.2);
  scene.primitives.emplace_back(sph);

  // odd resolution so the central pixel's sample point sits on the optical axis
  const CameraIntrinsics intr = CameraIntrinsics::pinhole(32.0, 65, 65);
  const CameraExtrinsics extr;  // identity: at origin looking +z
  Image img;
  DepthMap depth;
  render_ground_truth(scene, intr, extr, &img, &depth);
  CHECK(depth.at(32, 32) == doctest::Approx(4.0).epsilon(1e-12));

  // camera turned around: nothing to hit
  CameraExtrinsics away = CameraExtrinsics::look_along({0, 0, 0}, {0, 0, -1});
  render_ground_truth(scene, intr, away, &img, &depth);
  for (int y = 0; y < 65; ++y)
    for (int x = 0; x < 65; ++x) {
      REQUIRE(std::isinf(depth.at(y, x)));
      REQUIRE(img.pixel(y, x) == kBackgroundColor);
    }
}

TEST_CASE("depth round-trip: reprojected hits lie on scene surfaces") {
  const ProceduralScene scene = generate_scene(42, 6);
  const CameraIntrinsics intr = CameraIntrinsics::pinhole(28.0, 48, 36);
  Rng rng(5);
  const PoseSampler sampler = default_pose_sampler(scene);
  for (int trial = 0; trial < 3; ++trial) {
    const CameraExtrinsics extr = sampler(rng);
    Image img;
    DepthMap depth;
    render_ground_truth(scene, intr, extr, &img, &depth);
    double worst = 0.0;
    int hits = 0;
    for (int y = 0; y < intr.height; y += 3)
      for (int x = 0; x < intr.width; x += 3) {
        const double d = depth.at(y, x);
        if (!std::isfinite(d)) continue;
        const Ray ray = ray_through_pixel({x + 0.5, y + 0.5}, intr, extr);
        worst = std::max(worst, surface_distance(scene, ray.at(d)));
        ++hits;
      }
    CHECK(hits > 0);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("frustum_overlap: exact cases and properties") {
  const CameraIntrinsics intr = CameraIntrinsics::pinhole(30.0, 40, 30);
  CameraExtrinsics e1;
  CHECK(frustum_overlap(e1, e1, intr, 0.1, 6.0) == 1.0);

  CameraExtrinsics back = CameraExtrinsics::look_along({0, 0, 0}, {0, 0, -1});
  CameraExtrinsics fwd = CameraExtrinsics::look_along({0, 0, 0}, {0, 0, 1});
  CHECK(frustum_overlap(back, fwd, intr, 0.1, 6.0) == 0.0);

  CHECK_THROWS_AS(frustum_overlap(e1, e1, intr, -1.0, 5.0), std::invalid_argument);
  CHECK_THROWS_AS(frustum_overlap(e1, e1, intr, 2.0, 1.0), std::invalid_argument);

  Rng rng(31);
  for (int i = 0; i < 100; ++i) {
    CameraExtrinsics a = testutil::random_pose(rng, 2.0);
    CameraExtrinsics b = testutil::random_pose(rng, 2.0);
    const double oab = frustum_overlap(a, b, intr, 0.1, 6.0, 4096);
    const double oba = frustum_overlap(b, a, intr, 0.1, 6.0, 4096);
    CHECK(oab == oba);  // same fixed point set both ways
    CHECK(oab >= 0.0);
    CHECK(oab <= 1.0);
    CHECK(frustum_overlap(a, a, intr, 0.1, 6.0, 4096) == 1.0);
  }
}

TEST_CASE("frustum_overlap tracks an independent Monte-Carlo oracle") {
  const CameraIntrinsics intr = CameraIntrinsics::pinhole(30.0, 40, 30);
  Rng rng(77);
  Rng oracle_rng(123456);
  int informative = 0;
  for (int i = 0; i < 25; ++i) {
    // nearby poses so a good fraction genuinely overlap
    CameraExtrinsics a = CameraExtrinsics::look_along(
        {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(1.0, 1.6)},
        {std::cos(rng.uniform(0, 6.28)), std::sin(rng.uniform(0, 6.28)),
         rng.uniform(-0.2, 0.2)});
    CameraExtrinsics b = a;
    b.t += Eigen::Vector3d(rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8), 0);
    b.R = (Eigen::AngleAxisd(rng.uniform(-0.5, 0.5), Eigen::Vector3d::UnitZ()) * b.R);
    const double impl = frustum_overlap(a, b, intr, 0.1, 6.0);
    const double oracle = mc_iou_oracle(a, b, intr, 0.1, 6.0, 200000, oracle_rng);
    CHECK(std::abs(impl - oracle) < 0.02);
    if (impl > 0.05 && impl < 0.95) ++informative;
  }
  CHECK(informative >= 5);  // the comparison actually exercised partial overlaps
}

TEST_CASE("select_views honors Algorithm 1's acceptance contract") {
  const ProceduralScene scene = generate_scene(7, 4);
  const CameraIntrinsics intr = CameraIntrinsics::pinhole(24.0, 32, 24);
  ViewSelectConfig cfg;
  cfg.n_views = 10;
  cfg.overlap_samples = 4096;

  SUBCASE("N_v=1 returns the first proposal") {
    cfg.n_views = 1;
    Rng rng(9);
    Rng rng_replay(9);
    const auto views = select_views(scene, intr, cfg, default_pose_sampler(scene), rng);
    REQUIRE(views.size() == 1);
    const CameraExtrinsics first = default_pose_sampler(scene)(rng_replay);
    CHECK((views[0].t - first.t).norm() == 0.0);
    CHECK((views[0].R - first.R).norm() == 0.0);
  }

  SUBCASE("pairwise distance and prefix overlap hold; deterministic") {
    Rng rng(9);
    const auto views = select_views(scene, intr, cfg, default_pose_sampler(scene), rng);
    REQUIRE(static_cast<int>(views.size()) == cfg.n_views);
    const double far = scene.room_diagonal();
    for (std::size_t i = 0; i < views.size(); ++i)
      for (std::size_t j = 0; j < i; ++j)
        CHECK(camera_distance(views[i], views[j]) >= cfg.min_distance);
    for (std::size_t i = 1; i < views.size(); ++i) {
      double best = 0.0;
      for (std::size_t j = 0; j < i; ++j)
        best = std::max(best, frustum_overlap(views[i], views[j], intr, cfg.near, far,
                                              cfg.overlap_samples));
      CHECK(best >= cfg.min_overlap);
    }
    Rng rng2(9);
    const auto views2 = select_views(scene, intr, cfg, default_pose_sampler(scene), rng2);
    REQUIRE(views2.size() == views.size());
    for (std::size_t i = 0; i < views.size(); ++i) {
      CHECK((views[i].t - views2[i].t).norm() == 0.0);
      CHECK((views[i].R - views2[i].R).norm() == 0.0);
    }
  }

  SUBCASE("impossible thresholds exhaust the proposal budget") {
    cfg.min_distance = 100.0;  // no second view can qualify
    cfg.n_views = 3;
    cfg.max_proposals = 200;
    Rng rng(9);
    CHECK_THROWS_AS(select_views(scene, intr, cfg, default_pose_sampler(scene), rng),
                    std::runtime_error);
  }
}
