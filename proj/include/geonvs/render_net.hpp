// Copyright 2026 The geonvs Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "geonvs/feature_net.hpp"
#include "geonvs/scene_io.hpp"

namespace geonvs {

struct RenderNetConfig {
  int hidden = 32;   // aggregation MLP width
  int rt_dim = 32;   // ray-transformer token dim
  int rt_heads = 4;
  int n_coarse = 64;
  int n_fine = 64;
  bool share_coarse_fine = false;
};

// Geometry-only per-view data for a set of 3D samples (everything constant
// on the tape; features are sampled separately because they carry gradient).
struct PointFeatureView {
  Mat pix;     // N x 2 projected pixels
  Mat rgb;     // N x 3 bilinear image colors
  Mat ddelta;  // N x 4 [unit ray-dir difference, dot]
  Mat valid;   // N x 1 (1 = in front and inside bounds)
};

// p3s: N x 3 sample points, ray_dirs: N x 3 unit rendering-ray directions.
PointFeatureView point_feature_view(const CameraView& view, const Mat& p3s,
                                    const Mat& ray_dirs);

// Per-sample set aggregation over source views (masked mean/variance pooling
// + MLP -> blend logits over views and a density token) followed by a
// cross-sample ray transformer that emits densities.
class RayAggregator {
 public:
  RayAggregator() = default;
  RayAggregator(ParamStore& store, Rng& rng, const std::string& prefix, int feature_dim,
                const RenderNetConfig& cfg);

  struct ViewSample {
    Var feat;    // N x C (sampled from the view's feature map)
    Mat rgb;     // N x 3
    Mat ddelta;  // N x 4
    Mat valid;   // N x 1
  };

  struct Prediction {
    Var sample_colors;  // N x 3, convex blend of source colors (or background)
    Var sigmas;         // N x 1, sentinel -10 on samples with no valid view
    std::vector<Mat> blend_weights;  // per view, N x 1 (values, for inspection)
  };

  // N = n_rays * n_samples rows, grouped by ray.
  Prediction predict(ParamBinder& pb, const std::vector<ViewSample>& views, int n_rays,
                     int n_samples) const;

 private:
  std::string prefix_;
  RenderNetConfig cfg_;
  int feature_dim_ = 0;
  Linear agg1_, agg2_, blend_;
  Linear token_, rt_q_, rt_k_, rt_v_, rt_o_, rt_mlp1_, rt_mlp2_, density_;
};

// Softmax-weighted accumulation: C = sum_i c_i e^{sigma_i} / sum_i e^{sigma_i},
// per contiguous row block of S samples. Returns the normalized weights too.
struct AccumulateOut {
  Var color;    // R x 3
  Mat weights;  // R x S (values)
};
AccumulateOut accumulate_softmax_var(Tape& t, Var sigmas, Var colors, int S);

// Plain-math single-ray version used by evaluation and tests.
struct SoftmaxAccum {
  Eigen::Vector3d color;
  std::vector<double> weights;
};
SoftmaxAccum accumulate_softmax(const std::vector<double>& sigmas,
                                const std::vector<Eigen::Vector3d>& colors);

// Inverse-transform sampling from the piecewise-constant PDF induced by the
// coarse weights over the N-1 bins between consecutive coarse depths
// (bin mass (w_i + w_{i+1})/2, renormalized). Output sorted ascending.
std::vector<double> fine_resample(const std::vector<double>& weights,
                                  const std::vector<double>& depths, int n_fine,
                                  Rng& rng);

struct RaySet {
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Mat dirs;    // R x 3, unnormalized pixel ray directions
  Mat gt_rgb;  // R x 3 ground truth (zeros when not supervised)
};

RaySet rays_for_pixels(const CameraView& target, const std::vector<Eigen::Vector2d>& pixels);

struct RenderResult {
  Var coarse_color;  // R x 3
  Var fine_color;    // R x 3
  Mat coarse_weights;
  Mat fine_weights;
  Mat coarse_depths;            // R x n_coarse
  Mat fine_depths;              // R x (n_coarse + n_fine), sorted per ray
  std::vector<char> flagged;    // rays whose coarse samples were all invalid
};

// Coarse pass, weight-driven fine resampling (detached), fine pass.
// fixed_fine_depths overrides the resampling (gradient checks pin it).
RenderResult render_rays(ParamBinder& pb, const RayAggregator& coarse,
                         const RayAggregator& fine, const FeatureMaps& maps,
                         const std::vector<CameraView>& sources, const RaySet& rays,
                         double near, double far, const RenderNetConfig& cfg, Rng& rng,
                         const Mat* fixed_fine_depths = nullptr);

// Mean over rays of |C_coarse - C|^2 + |C_fine - C|^2.
Var color_loss(Var coarse_color, Var fine_color, const Mat& gt_rgb);

// Renders a whole view in chunks (no gradient); returns image and optional
// softmax-expected depth from the fine stage.
Image render_image(ParamStore& store, const RayAggregator& coarse,
                   const RayAggregator& fine, const FeatureNet& fnet,
                   const std::vector<CameraView>& sources, const CameraIntrinsics& intr,
                   const CameraExtrinsics& extr, double near, double far,
                   const RenderNetConfig& cfg, const FeatureNetConfig& fcfg, Rng& rng,
                   DepthMap* expected_depth = nullptr, int chunk = 256);

}  // namespace geonvs
