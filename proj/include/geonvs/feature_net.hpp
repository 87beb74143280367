// Copyright 2026 The geonvs Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "geonvs/epipolar.hpp"
#include "geonvs/nn.hpp"

namespace geonvs {

struct AttentionConfig {
  int heads = 4;
  int inner_dim = 32;
  int n_epipolar_keys = 16;
  AttentionMode mode = AttentionMode::kSubtraction;
  bool sinusoidal_pe = true;  // false: learnable position embeddings
};

struct FeatureNetConfig {
  int enc1 = 16, enc2 = 32, enc3 = 64;  // encoder stage widths
  int feature_dim = 32;                 // C of the output maps
  bool use_attention = true;
  AttentionConfig attn;

  static constexpr int kStride = 4;  // output stride fixed by the architecture
};

// Per-source-view dense feature grids. `base` holds F_i from the shared CNN;
// `enhanced` holds F_i' and exists only after cross-view attention ran.
struct FeatureMaps {
  int height = 0, width = 0;  // feature-grid size
  int stride = FeatureNetConfig::kStride;
  std::vector<Var> base;
  std::vector<Var> enhanced;

  const std::vector<Var>& active() const { return enhanced.empty() ? base : enhanced; }
  // image coords -> feature-grid coords
  static Mat to_feature_coords(const Mat& image_pts, int stride);
};

// Shared U-Net encoder/decoder (instance-normalized, ReLU) plus the two-stage
// cross-view attention that turns F_i into geometrically enhanced F_i'.
class FeatureNet {
 public:
  FeatureNet(ParamStore& store, Rng& rng, const FeatureNetConfig& cfg);

  // images: one (H*W) x 3 var per view (constant or leaf), identical shapes.
  FeatureMaps extract(ParamBinder& pb, const std::vector<Var>& images, int H,
                      int W) const;

  // Builds epipolar keys into every other view, runs stage-1 then stage-2
  // attention, and writes maps.enhanced. Views with no valid keys anywhere
  // fall back to the identity residual. No-op (enhanced = base) when there is
  // a single view or attention is disabled.
  void enhance(ParamBinder& pb, FeatureMaps& maps,
               const std::vector<PosedCamera>& cams, double near, double far,
               Rng& rng) const;

  // Stage-1 aggregation along one epipolar line (Mha over grouped keys).
  // query/keys are already reduced to inner_dim; keys carry P(s).
  Var fuse_epipolar(ParamBinder& pb, Var query, Var keys, int n_keys,
                    const Mat* mask = nullptr, std::vector<Mat>* attn = nullptr) const;
  // Stage-2 aggregation across per-view summaries; no positional encoding.
  Var fuse_views(ParamBinder& pb, Var query, Var summaries, int n_views,
                 const Mat* mask = nullptr, std::vector<Mat>* attn = nullptr) const;

  Var reduce_stage1(ParamBinder& pb, Var x) const { return reduce1_(pb, x); }
  Var reduce_stage2(ParamBinder& pb, Var x) const { return reduce2_(pb, x); }
  Var lift(ParamBinder& pb, Var x) const { return lift_(pb, x); }
  // P(s) for ordinals 0..n-1 (constant when sinusoidal, else parameter value).
  Mat positional_encoding(const ParamStore& store, int n) const;

  const FeatureNetConfig& config() const { return cfg_; }

 private:
  FeatureNetConfig cfg_;
  Conv3x3 enc1a_, enc1b_, enc2_, enc3_;
  InstanceNorm in1a_, in1b_, in2_, in3_;
  Conv3x3 dec1_, dec2_;
  InstanceNorm ind1_;
  Linear reduce1_, reduce2_, lift_;
  Mha mha1_, mha2_;
};

}  // namespace geonvs
