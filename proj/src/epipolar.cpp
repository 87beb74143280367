// Copyright 2026 The geonvs Authors
// SPDX-License-Identifier: Apache-2.0
#include "geonvs/epipolar.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace geonvs {

std::vector<double> sample_ray_depths(double near, double far, int n,
                                      bool stratified, Rng* rng) {
  if (!(near > 0.0)) throw std::invalid_argument("sample_ray_depths: near must be > 0");
  if (n < 1) throw std::invalid_argument("sample_ray_depths: n must be >= 1");
  if (far < near) throw std::invalid_argument("sample_ray_depths: far < near");
  if (far == near && n > 1)
    throw std::invalid_argument("sample_ray_depths: degenerate range for n > 1");
  if (stratified && rng == nullptr)
    throw std::invalid_argument("sample_ray_depths: stratified mode needs an rng");

  const double d_near = 1.0 / near, d_far = 1.0 / far;
  std::vector<double> depths(static_cast<std::size_t>(n));
  if (!stratified) {
    if (n == 1) {
      depths[0] = (far == near) ? near : 2.0 / (d_near + d_far);
      return depths;
    }
    for (int k = 0; k < n; ++k) {
      const double disp = d_near + (d_far - d_near) * k / (n - 1);
      depths[static_cast<std::size_t>(k)] = 1.0 / disp;
    }
  } else {
    for (int k = 0; k < n; ++k) {
      const double u = rng->uniform();
      const double disp = d_near + (d_far - d_near) * (k + u) / n;
      depths[static_cast<std::size_t>(k)] = 1.0 / disp;
    }
  }
  std::sort(depths.begin(), depths.end());
  return depths;
}

EpipolarSamples epipolar_projections(const Eigen::Vector2d& u, const PosedCamera& view_i,
                                     const PosedCamera& view_j, int n_samples,
                                     double near, double far, bool stratified,
                                     Rng* rng) {
  const Ray ray = ray_through_pixel(u, view_i.intr, view_i.extr);
  EpipolarSamples out;
  out.depths = sample_ray_depths(near, far, n_samples, stratified, rng);
  out.points.reserve(out.depths.size());
  out.projections.reserve(out.depths.size());
  for (double delta : out.depths) {
    const Eigen::Vector3d p = ray.at(delta);
    out.points.push_back(p);
    const Projection proj = project_point(p, view_j.intr, view_j.extr);
    EpipolarProjection ep;
    ep.v = proj.v;
    ep.depth = proj.depth;
    ep.valid = proj.depth > 1e-9 && pixel_in_bounds(proj.v, view_j.intr);
    out.projections.push_back(ep);
  }
  return out;
}

std::optional<Eigen::Vector2d> make_positive_pair(
    const Eigen::Vector2d& p, const PosedCamera& view_i, const DepthMap& depth_i,
    const PosedCamera& view_j, const DepthMap& depth_j, double eps_rel,
    bool nearest_lookup) {
  const double delta_p =
      nearest_lookup ? depth_i.nearest(p.x(), p.y()) : depth_i.bilinear(p.x(), p.y());
  if (!std::isfinite(delta_p)) return std::nullopt;
  const Ray ray = ray_through_pixel(p, view_i.intr, view_i.extr);
  const Eigen::Vector3d p3 = ray.at(delta_p);
  const Projection proj = project_point(p3, view_j.intr, view_j.extr);
  if (proj.depth <= 1e-9 || !pixel_in_bounds(proj.v, view_j.intr)) return std::nullopt;
  const double d_ref = nearest_lookup ? depth_j.nearest(proj.v.x(), proj.v.y())
                                      : depth_j.bilinear(proj.v.x(), proj.v.y());
  if (!std::isfinite(d_ref)) return std::nullopt;
  if (std::abs(proj.depth - d_ref) > eps_rel * proj.depth) return std::nullopt;
  return proj.v;
}

std::vector<Eigen::Vector2d> make_negative_pairs(const Eigen::Vector2d& p,
                                                 const PosedCamera& view_i,
                                                 const PosedCamera& view_j, int n_neg,
                                                 double near, double far, Rng& rng,
                                                 int retry_rounds) {
  if (n_neg < 1) throw std::invalid_argument("make_negative_pairs: n_neg must be >= 1");
  std::vector<Eigen::Vector2d> negatives;
  negatives.reserve(static_cast<std::size_t>(n_neg));
  std::vector<Eigen::Vector2d> last_rejects;
  for (int round = 0; round <= retry_rounds; ++round) {
    const EpipolarSamples samples =
        epipolar_projections(p, view_i, view_j, n_neg, near, far, true, &rng);
    last_rejects.clear();
    for (const EpipolarProjection& proj : samples.projections) {
      if (static_cast<int>(negatives.size()) >= n_neg) break;
      if (proj.valid)
        negatives.push_back(proj.v);
      else
        last_rejects.push_back(proj.v);
    }
    if (static_cast<int>(negatives.size()) >= n_neg) return negatives;
  }
  // Retry budget exhausted: clamp leftover projections into bounds.
  const double xmax = view_j.intr.width - 1e-6, ymax = view_j.intr.height - 1e-6;
  std::size_t k = 0;
  while (static_cast<int>(negatives.size()) < n_neg) {
    Eigen::Vector2d v = k < last_rejects.size() ? last_rejects[k++] : p;
    v.x() = std::min(std::max(v.x(), 0.0), xmax);
    v.y() = std::min(std::max(v.y(), 0.0), ymax);
    negatives.push_back(v);
  }
  return negatives;
}

}  // namespace geonvs
