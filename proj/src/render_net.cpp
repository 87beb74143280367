// Copyright 2026 The geonvs Authors
// SPDX-License-Identifier: Apache-2.0
#include "geonvs/render_net.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "geonvs/epipolar.hpp"

namespace geonvs {

PointFeatureView point_feature_view(const CameraView& view, const Mat& p3s,
                                    const Mat& ray_dirs) {
  const int n = static_cast<int>(p3s.rows());
  PointFeatureView out;
  out.pix = Mat::Zero(n, 2);
  out.rgb = Mat::Zero(n, 3);
  out.ddelta = Mat::Zero(n, 4);
  out.valid = Mat::Zero(n, 1);
  for (int k = 0; k < n; ++k) {
    const Eigen::Vector3d p = p3s.row(k).transpose();
    const Projection proj = project_point(p, view.intr, view.extr);
    if (proj.depth > 1e-9 && pixel_in_bounds(proj.v, view.intr)) {
      out.valid(k, 0) = 1.0;
      out.pix(k, 0) = proj.v.x();
      out.pix(k, 1) = proj.v.y();
      const Eigen::Vector3d c = view.rgb.bilinear(proj.v.x(), proj.v.y());
      out.rgb.row(k) = c.transpose();
    }
    const Eigen::Vector3d d_render = ray_dirs.row(k).transpose();
    Eigen::Vector3d d_view = p - view.extr.t;
    const double nrm = d_view.norm();
    if (nrm > 1e-12) d_view /= nrm;
    out.ddelta(k, 0) = d_render.x() - d_view.x();
    out.ddelta(k, 1) = d_render.y() - d_view.y();
    out.ddelta(k, 2) = d_render.z() - d_view.z();
    out.ddelta(k, 3) = d_render.dot(d_view);
  }
  return out;
}

RayAggregator::RayAggregator(ParamStore& store, Rng& rng, const std::string& prefix,
                             int feature_dim, const RenderNetConfig& cfg)
    : prefix_(prefix), cfg_(cfg), feature_dim_(feature_dim) {
  const int d = feature_dim + 7;  // feat + rgb + ddelta
  agg1_ = Linear(store, rng, prefix + ".agg1", 3 * d, cfg.hidden);
  agg2_ = Linear(store, rng, prefix + ".agg2", cfg.hidden, cfg.hidden);
  blend_ = Linear(store, rng, prefix + ".blend", cfg.hidden, 1);
  token_ = Linear(store, rng, prefix + ".token", cfg.hidden, cfg.rt_dim);
  rt_q_ = Linear(store, rng, prefix + ".rt.q", cfg.rt_dim, cfg.rt_dim);
  rt_k_ = Linear(store, rng, prefix + ".rt.k", cfg.rt_dim, cfg.rt_dim);
  rt_v_ = Linear(store, rng, prefix + ".rt.v", cfg.rt_dim, cfg.rt_dim);
  rt_o_ = Linear(store, rng, prefix + ".rt.o", cfg.rt_dim, cfg.rt_dim);
  rt_mlp1_ = Linear(store, rng, prefix + ".rt.mlp1", cfg.rt_dim, cfg.rt_dim);
  rt_mlp2_ = Linear(store, rng, prefix + ".rt.mlp2", cfg.rt_dim, cfg.rt_dim);
  density_ = Linear(store, rng, prefix + ".density", cfg.rt_dim, 1);
}

RayAggregator::Prediction RayAggregator::predict(ParamBinder& pb,
                                                 const std::vector<ViewSample>& views,
                                                 int n_rays, int n_samples) const {
  if (views.empty()) throw std::invalid_argument("RayAggregator: no source views");
  Tape& t = pb.tape();
  const int n = n_rays * n_samples;
  const int n_views = static_cast<int>(views.size());

  // masked mean/variance pooling across views
  Mat count = Mat::Zero(n, 1);
  for (const ViewSample& vs : views) count += vs.valid;
  Mat inv_count(n, 1);
  Mat any(n, 1);
  for (int k = 0; k < n; ++k) {
    inv_count(k, 0) = count(k, 0) > 0 ? 1.0 / count(k, 0) : 0.0;
    any(k, 0) = count(k, 0) > 0 ? 1.0 : 0.0;
  }
  Var inv_count_c = t.constant(inv_count);

  std::vector<Var> xs;
  xs.reserve(static_cast<std::size_t>(n_views));
  for (const ViewSample& vs : views)
    xs.push_back(concat_cols({vs.feat, t.constant(vs.rgb), t.constant(vs.ddelta)}));

  Var mean = mul_colvec(xs[0], t.constant(views[0].valid));
  for (int v = 1; v < n_views; ++v)
    mean = add(mean, mul_colvec(xs[static_cast<std::size_t>(v)],
                                t.constant(views[static_cast<std::size_t>(v)].valid)));
  mean = mul_colvec(mean, inv_count_c);

  Var variance;
  for (int v = 0; v < n_views; ++v) {
    Var diff = sub(xs[static_cast<std::size_t>(v)], mean);
    Var contrib = mul_colvec(mul(diff, diff),
                             t.constant(views[static_cast<std::size_t>(v)].valid));
    variance = (v == 0) ? contrib : add(variance, contrib);
  }
  variance = mul_colvec(variance, inv_count_c);

  // per-view MLP and blend logits
  std::vector<Var> ys, logits;
  for (int v = 0; v < n_views; ++v) {
    Var in = concat_cols({xs[static_cast<std::size_t>(v)], mean, variance});
    Var y = relu(agg2_(pb, relu(agg1_(pb, in))));
    ys.push_back(y);
    logits.push_back(blend_(pb, y));
  }
  Var blend_logits = concat_cols(logits);  // n x V
  Mat blend_mask(n, n_views);
  for (int v = 0; v < n_views; ++v)
    blend_mask.col(v) = views[static_cast<std::size_t>(v)].valid.col(0);
  Var blend_w = softmax_rows(blend_logits, &blend_mask);

  Prediction pred;
  for (int v = 0; v < n_views; ++v) {
    Var w_col = cols(blend_w, v, 1);
    Var contrib = mul_colvec(t.constant(views[static_cast<std::size_t>(v)].rgb), w_col);
    pred.sample_colors = (v == 0) ? contrib : add(pred.sample_colors, contrib);
    pred.blend_weights.push_back(t.val(w_col));
  }
  // samples with no valid view fall back to the background color
  Mat bg(n, 3);
  for (int k = 0; k < n; ++k)
    bg.row(k) = (1.0 - any(k, 0)) * kBackgroundColor.transpose();
  pred.sample_colors = add(pred.sample_colors, t.constant(bg));

  // density token: masked mean of per-view features
  Var ztok = mul_colvec(ys[0], t.constant(views[0].valid));
  for (int v = 1; v < n_views; ++v)
    ztok = add(ztok, mul_colvec(ys[static_cast<std::size_t>(v)],
                                t.constant(views[static_cast<std::size_t>(v)].valid)));
  ztok = token_(pb, mul_colvec(ztok, inv_count_c));

  // ray transformer over the samples of each ray
  Mat pe_one = sinusoidal_positions(n_samples, cfg_.rt_dim);
  Mat pe(n, cfg_.rt_dim);
  for (int r = 0; r < n_rays; ++r) pe.middleRows(r * n_samples, n_samples) = pe_one;
  Var tok = add(ztok, t.constant(pe));

  Var q = rt_q_(pb, tok), k = rt_k_(pb, tok), v = rt_v_(pb, tok);
  const int dh = cfg_.rt_dim / cfg_.rt_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> heads;
  for (int h = 0; h < cfg_.rt_heads; ++h) {
    Var qh = cols(q, h * dh, dh), kh = cols(k, h * dh, dh), vh = cols(v, h * dh, dh);
    Var attn = softmax_rows(scale(block_attn_logits(qh, kh, n_samples), inv_sqrt));
    heads.push_back(block_attn_apply(attn, vh, n_samples));
  }
  Var tok2 = add(tok, rt_o_(pb, concat_cols(heads)));
  Var tok3 = add(tok2, rt_mlp2_(pb, relu(rt_mlp1_(pb, tok2))));
  Var sigma_raw = density_(pb, tok3);

  // sentinel density for invalid samples
  Mat sentinel(n, 1);
  for (int kk = 0; kk < n; ++kk) sentinel(kk, 0) = (1.0 - any(kk, 0)) * -10.0;
  pred.sigmas = add(mul(sigma_raw, t.constant(any)), t.constant(sentinel));
  return pred;
}

AccumulateOut accumulate_softmax_var(Tape& t, Var sigmas, Var colors, int S) {
  if (sigmas.cols() != 1 || colors.cols() != 3 || sigmas.rows() != colors.rows())
    throw std::invalid_argument("accumulate_softmax: shape mismatch");
  if (S < 1 || sigmas.rows() % S != 0)
    throw std::invalid_argument("accumulate_softmax: rows not divisible by S");
  const int rays = sigmas.rows() / S;
  Var sig_rows = reshape(sigmas, rays, S);
  Var attn = softmax_rows(sig_rows);
  Var w_flat = reshape(attn, rays * S, 1);
  AccumulateOut out;
  out.color = sum_row_groups(mul_colvec(colors, w_flat), S);
  out.weights = t.val(attn);
  return out;
}

SoftmaxAccum accumulate_softmax(const std::vector<double>& sigmas,
                                const std::vector<Eigen::Vector3d>& colors) {
  if (sigmas.empty() || sigmas.size() != colors.size())
    throw std::invalid_argument("accumulate_softmax: need >= 1 aligned sample");
  const double m = *std::max_element(sigmas.begin(), sigmas.end());
  SoftmaxAccum out;
  out.weights.resize(sigmas.size());
  double z = 0.0;
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    out.weights[i] = std::exp(sigmas[i] - m);
    z += out.weights[i];
  }
  out.color.setZero();
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    out.weights[i] /= z;
    out.color += out.weights[i] * colors[i];
  }
  return out;
}

std::vector<double> fine_resample(const std::vector<double>& weights,
                                  const std::vector<double>& depths, int n_fine,
                                  Rng& rng) {
  if (weights.size() != depths.size() || depths.empty())
    throw std::invalid_argument("fine_resample: misaligned inputs");
  const std::size_t n = depths.size();
  std::vector<double> out(static_cast<std::size_t>(n_fine));
  if (n == 1) {
    std::fill(out.begin(), out.end(), depths[0]);
    return out;
  }
  std::vector<double> mass(n - 1);
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    mass[i] = std::max(0.0, 0.5 * (weights[i] + weights[i + 1]));
    total += mass[i];
  }
  if (total <= 0.0) {
    for (double& m : mass) m = 1.0;
    total = static_cast<double>(mass.size());
  }
  std::vector<double> cdf(n);
  cdf[0] = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) cdf[i + 1] = cdf[i] + mass[i] / total;
  cdf[n - 1] = 1.0;
  for (int k = 0; k < n_fine; ++k) {
    const double u = rng.uniform();
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    std::size_t bin = static_cast<std::size_t>(std::distance(cdf.begin(), it));
    bin = std::min(std::max<std::size_t>(bin, 1), n - 1) - 1;
    const double seg = cdf[bin + 1] - cdf[bin];
    const double frac = seg > 0 ? (u - cdf[bin]) / seg : 0.5;
    out[static_cast<std::size_t>(k)] = depths[bin] + frac * (depths[bin + 1] - depths[bin]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

RaySet rays_for_pixels(const CameraView& target,
                       const std::vector<Eigen::Vector2d>& pixels) {
  RaySet rays;
  rays.origin = target.extr.t;
  rays.dirs = Mat(static_cast<int>(pixels.size()), 3);
  rays.gt_rgb = Mat::Zero(static_cast<int>(pixels.size()), 3);
  for (std::size_t k = 0; k < pixels.size(); ++k) {
    const Ray r = ray_through_pixel(pixels[k], target.intr, target.extr);
    rays.dirs.row(static_cast<int>(k)) = r.direction.transpose();
    if (target.rgb.width > 0) {
      const Eigen::Vector3d c = target.rgb.bilinear(pixels[k].x(), pixels[k].y());
      rays.gt_rgb.row(static_cast<int>(k)) = c.transpose();
    }
  }
  return rays;
}

namespace {

struct StagePrediction {
  Var color;    // R x 3
  Mat weights;  // R x S
  std::vector<char> flagged;
};

StagePrediction run_stage(ParamBinder& pb, const RayAggregator& agg,
                          const FeatureMaps& maps, const std::vector<CameraView>& sources,
                          const RaySet& rays, const Mat& depths) {
  Tape& t = pb.tape();
  const int n_rays = static_cast<int>(depths.rows());
  const int S = static_cast<int>(depths.cols());
  const int n = n_rays * S;

  Mat p3s(n, 3), unit_dirs(n, 3);
  for (int r = 0; r < n_rays; ++r) {
    const Eigen::Vector3d dir = rays.dirs.row(r).transpose();
    const Eigen::Vector3d unit = dir.normalized();
    for (int s = 0; s < S; ++s) {
      p3s.row(r * S + s) = (rays.origin + depths(r, s) * dir).transpose();
      unit_dirs.row(r * S + s) = unit.transpose();
    }
  }

  std::vector<RayAggregator::ViewSample> samples;
  samples.reserve(sources.size());
  Mat any = Mat::Zero(n, 1);
  for (std::size_t v = 0; v < sources.size(); ++v) {
    const PointFeatureView geo = point_feature_view(sources[v], p3s, unit_dirs);
    RayAggregator::ViewSample vs;
    Mat feat_pts = FeatureMaps::to_feature_coords(geo.pix, maps.stride);
    vs.feat = grid_sample(maps.active()[v], maps.height, maps.width, feat_pts);
    // zero out features of invalid projections so clamped taps cannot leak
    vs.feat = mul_colvec(vs.feat, t.constant(geo.valid));
    vs.rgb = geo.rgb;
    vs.ddelta = geo.ddelta;
    vs.valid = geo.valid;
    any = any.cwiseMax(geo.valid);
    samples.push_back(std::move(vs));
  }

  RayAggregator::Prediction pred = agg.predict(pb, samples, n_rays, S);
  AccumulateOut accum = accumulate_softmax_var(t, pred.sigmas, pred.sample_colors, S);

  StagePrediction out;
  out.color = accum.color;
  out.weights = accum.weights;
  out.flagged.resize(static_cast<std::size_t>(n_rays), 0);
  for (int r = 0; r < n_rays; ++r) {
    bool any_valid = false;
    for (int s = 0; s < S; ++s)
      if (any(r * S + s, 0) > 0) any_valid = true;
    out.flagged[static_cast<std::size_t>(r)] = any_valid ? 0 : 1;
  }
  return out;
}

}  // namespace

RenderResult render_rays(ParamBinder& pb, const RayAggregator& coarse,
                         const RayAggregator& fine, const FeatureMaps& maps,
                         const std::vector<CameraView>& sources, const RaySet& rays,
                         double near, double far, const RenderNetConfig& cfg, Rng& rng,
                         const Mat* fixed_fine_depths) {
  const int n_rays = static_cast<int>(rays.dirs.rows());

  Mat coarse_depths(n_rays, cfg.n_coarse);
  for (int r = 0; r < n_rays; ++r) {
    const std::vector<double> d = sample_ray_depths(near, far, cfg.n_coarse, true, &rng);
    for (int s = 0; s < cfg.n_coarse; ++s) coarse_depths(r, s) = d[static_cast<std::size_t>(s)];
  }

  StagePrediction cp = run_stage(pb, coarse, maps, sources, rays, coarse_depths);

  Mat fine_depths;
  if (fixed_fine_depths) {
    fine_depths = *fixed_fine_depths;
  } else {
    fine_depths = Mat(n_rays, cfg.n_coarse + cfg.n_fine);
    for (int r = 0; r < n_rays; ++r) {
      std::vector<double> w(static_cast<std::size_t>(cfg.n_coarse));
      std::vector<double> d(static_cast<std::size_t>(cfg.n_coarse));
      for (int s = 0; s < cfg.n_coarse; ++s) {
        w[static_cast<std::size_t>(s)] = cp.weights(r, s);
        d[static_cast<std::size_t>(s)] = coarse_depths(r, s);
      }
      std::vector<double> extra = fine_resample(w, d, cfg.n_fine, rng);
      std::vector<double> merged = d;
      merged.insert(merged.end(), extra.begin(), extra.end());
      std::sort(merged.begin(), merged.end());
      for (std::size_t s = 0; s < merged.size(); ++s)
        fine_depths(r, static_cast<int>(s)) = merged[s];
    }
  }

  StagePrediction fp = run_stage(pb, fine, maps, sources, rays, fine_depths);

  RenderResult out;
  out.coarse_color = cp.color;
  out.fine_color = fp.color;
  out.coarse_weights = cp.weights;
  out.fine_weights = fp.weights;
  out.coarse_depths = coarse_depths;
  out.fine_depths = fine_depths;
  out.flagged = cp.flagged;
  return out;
}

Var color_loss(Var coarse_color, Var fine_color, const Mat& gt_rgb) {
  Tape& t = *coarse_color.tape;
  Var gt = t.constant(gt_rgb);
  Var dc = sub(coarse_color, gt);
  Var df = sub(fine_color, gt);
  return add(mean_all(sum_rows(mul(dc, dc))), mean_all(sum_rows(mul(df, df))));
}

Image render_image(ParamStore& store, const RayAggregator& coarse,
                   const RayAggregator& fine, const FeatureNet& fnet,
                   const std::vector<CameraView>& sources, const CameraIntrinsics& intr,
                   const CameraExtrinsics& extr, double near, double far,
                   const RenderNetConfig& cfg, const FeatureNetConfig& fcfg, Rng& rng,
                   DepthMap* expected_depth, int chunk) {
  Image out(intr.width, intr.height);
  if (expected_depth) *expected_depth = DepthMap(intr.width, intr.height);

  CameraView target;
  target.intr = intr;
  target.extr = extr;

  std::vector<Eigen::Vector2d> pixels;
  pixels.reserve(static_cast<std::size_t>(intr.width) * intr.height);
  for (int y = 0; y < intr.height; ++y)
    for (int x = 0; x < intr.width; ++x) pixels.emplace_back(x + 0.5, y + 0.5);

  const int H = sources.front().intr.height, W = sources.front().intr.width;
  std::vector<Mat> images;
  for (const CameraView& sv : sources) {
    Mat img(H * W, 3);
    for (int k = 0; k < H * W; ++k)
      for (int c = 0; c < 3; ++c) img(k, c) = sv.rgb.data[static_cast<std::size_t>(k) * 3 + c];
    images.push_back(std::move(img));
  }

  for (std::size_t off = 0; off < pixels.size(); off += static_cast<std::size_t>(chunk)) {
    const std::size_t count = std::min<std::size_t>(chunk, pixels.size() - off);
    std::vector<Eigen::Vector2d> chunk_px(pixels.begin() + static_cast<long>(off),
                                          pixels.begin() + static_cast<long>(off + count));
    Tape tape;
    ParamBinder pb(tape, store);
    std::vector<Var> image_vars;
    for (const Mat& img : images) image_vars.push_back(tape.constant(img));
    FeatureMaps maps = fnet.extract(pb, image_vars, H, W);
    std::vector<PosedCamera> cams;
    for (const CameraView& sv : sources) cams.push_back(sv.cam());
    Rng enhance_rng = rng.fork(1000 + off);
    fnet.enhance(pb, maps, cams, near, far, enhance_rng);

    RaySet rays = rays_for_pixels(target, chunk_px);
    Rng chunk_rng = rng.fork(off);
    RenderResult rr = render_rays(pb, coarse, fine, maps, sources, rays, near, far, cfg,
                                  chunk_rng, nullptr);
    const Mat& rgb = tape.val(rr.fine_color);
    for (std::size_t k = 0; k < count; ++k) {
      const int x = static_cast<int>((off + k) % static_cast<std::size_t>(intr.width));
      const int y = static_cast<int>((off + k) / static_cast<std::size_t>(intr.width));
      Eigen::Vector3d c = rgb.row(static_cast<int>(k)).transpose();
      out.set_pixel(y, x, c.cwiseMin(1.0).cwiseMax(0.0));
      if (expected_depth) {
        double d = 0.0;
        for (int s = 0; s < static_cast<int>(rr.fine_weights.cols()); ++s)
          d += rr.fine_weights(static_cast<int>(k), s) * rr.fine_depths(static_cast<int>(k), s);
        expected_depth->at(y, x) = d;
      }
    }
  }
  return out;
}

}  // namespace geonvs
