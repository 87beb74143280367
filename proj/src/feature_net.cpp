// Copyright 2026 The geonvs Authors
// SPDX-License-Identifier: Apache-2.0
#include "geonvs/feature_net.hpp"

#include <cmath>
#include <stdexcept>

namespace geonvs {

namespace {

int co(int n) { return (n - 1) / 2 + 1; }  // conv output size at stride 2

// Key-depth jitter must follow the camera pair, not the view order, so that
// permuting the input views permutes the enhanced maps exactly.
std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::uint64_t pose_pair_hash(const PosedCamera& a, const PosedCamera& b) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  h = fnv1a(a.extr.R.data(), 9 * sizeof(double), h);
  h = fnv1a(a.extr.t.data(), 3 * sizeof(double), h);
  h = fnv1a(b.extr.R.data(), 9 * sizeof(double), h);
  h = fnv1a(b.extr.t.data(), 3 * sizeof(double), h);
  return h;
}

}  // namespace

Mat FeatureMaps::to_feature_coords(const Mat& image_pts, int stride) {
  return image_pts / static_cast<double>(stride);
}

FeatureNet::FeatureNet(ParamStore& store, Rng& rng, const FeatureNetConfig& cfg)
    : cfg_(cfg) {
  enc1a_ = Conv3x3(store, rng, "fnet.enc1a", 3, cfg.enc1);
  in1a_ = InstanceNorm(store, "fnet.in1a", cfg.enc1);
  enc1b_ = Conv3x3(store, rng, "fnet.enc1b", cfg.enc1, cfg.enc1);
  in1b_ = InstanceNorm(store, "fnet.in1b", cfg.enc1);
  enc2_ = Conv3x3(store, rng, "fnet.enc2", cfg.enc1, cfg.enc2);
  in2_ = InstanceNorm(store, "fnet.in2", cfg.enc2);
  enc3_ = Conv3x3(store, rng, "fnet.enc3", cfg.enc2, cfg.enc3);
  in3_ = InstanceNorm(store, "fnet.in3", cfg.enc3);
  dec1_ = Conv3x3(store, rng, "fnet.dec1", cfg.enc3 + cfg.enc2, cfg.enc2);
  ind1_ = InstanceNorm(store, "fnet.ind1", cfg.enc2);
  dec2_ = Conv3x3(store, rng, "fnet.dec2", cfg.enc2 + cfg.enc1, cfg.feature_dim);

  if (cfg.use_attention) {
    const AttentionConfig& a = cfg.attn;
    reduce1_ = Linear(store, rng, "fnet.attn.reduce1", cfg.feature_dim, a.inner_dim);
    reduce2_ = Linear(store, rng, "fnet.attn.reduce2", cfg.feature_dim, a.inner_dim);
    lift_ = Linear(store, rng, "fnet.attn.lift", a.inner_dim, cfg.feature_dim);
    MhaConfig mc{a.inner_dim, a.heads, a.mode};
    mha1_ = Mha(store, rng, "fnet.attn.stage1", mc);
    mha2_ = Mha(store, rng, "fnet.attn.stage2", mc);
    if (!a.sinusoidal_pe)
      store.create("fnet.attn.pe", a.n_epipolar_keys, a.inner_dim, 0.1, rng);
  }
}

FeatureMaps FeatureNet::extract(ParamBinder& pb, const std::vector<Var>& images, int H,
                                int W) const {
  if (images.empty()) throw std::invalid_argument("extract_features: no images");
  for (Var img : images)
    if (img.rows() != H * W || img.cols() != 3)
      throw std::invalid_argument("extract_features: image shape mismatch");

  const int H2 = co(H), W2 = co(W);
  const int H4 = co(H2), W4 = co(W2);
  const int H8 = co(H4), W8 = co(W4);
  const int H16 = co(H8), W16 = co(W8);

  FeatureMaps maps;
  maps.height = H4;
  maps.width = W4;
  for (Var x : images) {
    Var s1 = relu(in1a_(pb, enc1a_(pb, x, H, W, 2)));            // stride 2
    s1 = relu(in1b_(pb, enc1b_(pb, s1, H2, W2, 2)));             // stride 4 (skip)
    Var s2 = relu(in2_(pb, enc2_(pb, s1, H4, W4, 2)));           // stride 8 (skip)
    Var s3 = relu(in3_(pb, enc3_(pb, s2, H8, W8, 2)));           // stride 16
    Var d1 = upsample2x(s3, H16, W16, H8, W8);
    d1 = relu(ind1_(pb, dec1_(pb, concat_cols({d1, s2}), H8, W8, 1)));
    Var d2 = upsample2x(d1, H8, W8, H4, W4);
    Var out = dec2_(pb, concat_cols({d2, s1}), H4, W4, 1);       // final conv, no IN/ReLU
    maps.base.push_back(out);
  }
  return maps;
}

Var FeatureNet::fuse_epipolar(ParamBinder& pb, Var query, Var keys, int n_keys,
                              const Mat* mask, std::vector<Mat>* attn) const {
  return mha1_(pb, query, keys, n_keys, mask, attn);
}

Var FeatureNet::fuse_views(ParamBinder& pb, Var query, Var summaries, int n_views,
                           const Mat* mask, std::vector<Mat>* attn) const {
  if (n_views < 1) throw std::invalid_argument("fuse_views: needs at least one view");
  return mha2_(pb, query, summaries, n_views, mask, attn);
}

Mat FeatureNet::positional_encoding(const ParamStore& store, int n) const {
  if (cfg_.attn.sinusoidal_pe) return sinusoidal_positions(n, cfg_.attn.inner_dim);
  const Mat& pe = store.at("fnet.attn.pe").value;
  if (pe.rows() < n) throw std::invalid_argument("positional_encoding: n too large");
  return pe.topRows(n);
}

void FeatureNet::enhance(ParamBinder& pb, FeatureMaps& maps,
                         const std::vector<PosedCamera>& cams, double near, double far,
                         Rng& rng) const {
  if (!cfg_.use_attention) {
    maps.enhanced = maps.base;
    return;
  }
  const int n_views = static_cast<int>(maps.base.size());
  if (static_cast<int>(cams.size()) != n_views)
    throw std::invalid_argument("enhance: cameras do not match feature views");
  if (n_views == 1) {
    maps.enhanced = maps.base;
    return;
  }

  Tape& t = pb.tape();
  const int S = cfg_.attn.n_epipolar_keys;
  const int hw = maps.height * maps.width;
  const int stride = maps.stride;

  maps.enhanced.clear();
  maps.enhanced.reserve(static_cast<std::size_t>(n_views));

  for (int i = 0; i < n_views; ++i) {
    Var q1 = reduce1_(pb, maps.base[static_cast<std::size_t>(i)]);
    Var q2 = reduce2_(pb, maps.base[static_cast<std::size_t>(i)]);

    std::vector<Var> summaries;
    std::vector<Mat> any_valid_cols;
    for (int j = 0; j < n_views; ++j) {
      if (j == i) continue;
      Rng pair_rng = rng.fork(pose_pair_hash(cams[static_cast<std::size_t>(i)],
                                             cams[static_cast<std::size_t>(j)]));
      Mat pts(hw * S, 2);
      Mat mask = Mat::Zero(hw, S);
      for (int fy = 0; fy < maps.height; ++fy) {
        for (int fx = 0; fx < maps.width; ++fx) {
          const int qrow = fy * maps.width + fx;
          const Eigen::Vector2d u_img((fx + 0.5) * stride, (fy + 0.5) * stride);
          const EpipolarSamples samples = epipolar_projections(
              u_img, cams[static_cast<std::size_t>(i)], cams[static_cast<std::size_t>(j)],
              S, near, far, true, &pair_rng);
          for (int s = 0; s < S; ++s) {
            const EpipolarProjection& proj = samples.projections[static_cast<std::size_t>(s)];
            pts(qrow * S + s, 0) = proj.v.x() / stride;
            pts(qrow * S + s, 1) = proj.v.y() / stride;
            mask(qrow, s) = proj.valid ? 1.0 : 0.0;
          }
        }
      }
      Var sampled = grid_sample(maps.base[static_cast<std::size_t>(j)], maps.height,
                                maps.width, pts);
      Var keys = reduce1_(pb, sampled);
      // add P(s), tiled across queries
      Var keys_pe;
      if (cfg_.attn.sinusoidal_pe) {
        Mat tile(hw * S, cfg_.attn.inner_dim);
        const Mat pe_local = sinusoidal_positions(S, cfg_.attn.inner_dim);
        for (int qrow = 0; qrow < hw; ++qrow) tile.middleRows(qrow * S, S) = pe_local;
        keys_pe = add(keys, t.constant(tile));
      } else {
        Var pe_param = pb("fnet.attn.pe");
        Var pe_row = reshape(rows(pe_param, 0, S), 1, S * cfg_.attn.inner_dim);
        Var pe_tiled = reshape(repeat_rows_grouped(pe_row, hw), hw * S, cfg_.attn.inner_dim);
        keys_pe = add(keys, pe_tiled);
      }
      summaries.push_back(mha1_(pb, q1, keys_pe, S, &mask));

      Mat any = Mat::Zero(hw, 1);
      for (int qrow = 0; qrow < hw; ++qrow)
        any(qrow, 0) = mask.row(qrow).maxCoeff() > 0.0 ? 1.0 : 0.0;
      any_valid_cols.push_back(any);
    }

    const int V = static_cast<int>(summaries.size());
    // interleave per-view summaries into grouped key rows
    Var keys2 = reshape(concat_cols(summaries), hw * V, cfg_.attn.inner_dim);
    Mat mask2(hw, V);
    for (int jj = 0; jj < V; ++jj) mask2.col(jj) = any_valid_cols[static_cast<std::size_t>(jj)].col(0);
    Var fused = mha2_(pb, q2, keys2, V, &mask2);
    Var lifted = lift_(pb, fused);
    // Rows with zero valid keys across all views keep the base feature.
    Mat gate(hw, 1);
    for (int qrow = 0; qrow < hw; ++qrow)
      gate(qrow, 0) = mask2.row(qrow).maxCoeff() > 0.0 ? 1.0 : 0.0;
    Var gated = mul_colvec(lifted, t.constant(gate));
    maps.enhanced.push_back(add(maps.base[static_cast<std::size_t>(i)], gated));
  }
}

}  // namespace geonvs
