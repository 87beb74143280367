// Copyright 2026 The geonvs Authors
// SPDX-License-Identifier: Apache-2.0
#include "geonvs/contrast.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <stdexcept>

namespace geonvs {

std::vector<double> negative_weights(const Eigen::Vector2d& q_plus,
                                     const std::vector<Eigen::Vector2d>& q_minus,
                                     double tau_prime) {
  if (q_minus.empty()) throw std::invalid_argument("negative_weights: empty negatives");
  if (!(tau_prime > 0)) throw std::invalid_argument("negative_weights: tau_prime <= 0");
  const std::size_t n = q_minus.size();
  std::vector<double> scaled(n);
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < n; ++k) {
    scaled[k] = (q_plus - q_minus[k]).norm() / tau_prime;
    m = std::max(m, scaled[k]);
  }
  double z = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    scaled[k] = std::exp(scaled[k] - m);
    z += scaled[k];
  }
  std::vector<double> lambda(n);
  for (std::size_t k = 0; k < n; ++k)
    lambda[k] = static_cast<double>(n) * scaled[k] / z;
  return lambda;
}

double weighted_info_nce(const Eigen::VectorXd& p_feat, const Eigen::VectorXd& q_plus_feat,
                         const std::vector<Eigen::VectorXd>& q_minus_feats,
                         const std::vector<double>& lambda, double tau) {
  if (!(tau > 0)) throw std::invalid_argument("weighted_info_nce: tau must be positive");
  if (q_minus_feats.empty())
    throw std::invalid_argument("weighted_info_nce: empty negatives");
  if (q_minus_feats.size() != lambda.size())
    throw std::invalid_argument("weighted_info_nce: lambda/negatives mismatch");
  const double a = p_feat.dot(q_plus_feat) / tau;
  double m = a;
  std::vector<double> terms;
  terms.reserve(lambda.size());
  for (std::size_t k = 0; k < lambda.size(); ++k) {
    if (lambda[k] <= 0.0) continue;
    const double x = p_feat.dot(q_minus_feats[k]) / tau + std::log(lambda[k]);
    terms.push_back(x);
    m = std::max(m, x);
  }
  double z = std::exp(a - m);
  for (double x : terms) z += std::exp(x - m);
  return -a + m + std::log(z);
}

std::vector<Eigen::Vector2d> random_negative_baseline(const CameraIntrinsics& view_j,
                                                      int n_neg, Rng& rng) {
  std::vector<Eigen::Vector2d> out;
  out.reserve(static_cast<std::size_t>(n_neg));
  for (int k = 0; k < n_neg; ++k)
    out.emplace_back(rng.uniform(0.0, view_j.width), rng.uniform(0.0, view_j.height));
  return out;
}

std::string contrast_batch_to_json(const ContrastBatch& batch) {
  nlohmann::json j = nlohmann::json::array();
  for (const ContrastPair& pair : batch.pairs) {
    nlohmann::json pj;
    pj["view_i"] = pair.view_i;
    pj["view_j"] = pair.view_j;
    pj["p"] = {pair.p.x(), pair.p.y()};
    if (pair.q_plus)
      pj["q_plus"] = {pair.q_plus->x(), pair.q_plus->y()};
    else
      pj["q_plus"] = nullptr;
    pj["occluded"] = !pair.q_plus.has_value();
    nlohmann::json negs = nlohmann::json::array();
    for (const auto& q : pair.q_minus) negs.push_back({q.x(), q.y()});
    pj["q_minus"] = negs;
    pj["lambda"] = pair.lambda;
    j.push_back(pj);
  }
  return j.dump(2);
}

void register_contrast_params(ParamStore& store, const ContrastConfig& cfg) {
  if (!(cfg.tau_init > 0)) throw std::invalid_argument("contrast: tau_init must be > 0");
  if (!(cfg.tau_prime > 0)) throw std::invalid_argument("contrast: tau_prime must be > 0");
  if (!store.has("contrast.log_tau"))
    store.create_const("contrast.log_tau", 1, 1, std::log(cfg.tau_init));
}

namespace {

Var l2_normalize_rows(Var x) {
  Var sq = sum_rows(mul(x, x));
  Var inv = pow_v(add_scalar(sq, 1e-12), -0.5);
  return mul_colvec(x, inv);
}

}  // namespace

ContrastResult contrastive_loss(ParamBinder& pb, const FeatureMaps& maps,
                                const std::vector<CameraView>& views, double near,
                                double far, const ContrastConfig& cfg, Rng& rng,
                                ContrastBatch* batch_out) {
  const int n_views = static_cast<int>(views.size());
  if (n_views < 2) throw std::invalid_argument("contrastive_loss: needs >= 2 views");
  if (maps.active().size() != views.size())
    throw std::invalid_argument("contrastive_loss: feature/view count mismatch");

  Tape& t = pb.tape();
  Var tau = clamp_min_v(exp_v(pb("contrast.log_tau")), cfg.tau_min);
  Var inv_tau = pow_v(tau, -1.0);

  std::vector<Var> pair_losses;
  ContrastResult result;

  for (int i = 0; i < n_views; ++i) {
    for (int j = 0; j < n_views; ++j) {
      if (i == j) continue;
      Rng pair_rng = rng.fork(static_cast<std::uint64_t>(i) * 10007ULL +
                              static_cast<std::uint64_t>(j));
      const CameraView& vi = views[static_cast<std::size_t>(i)];
      const CameraView& vj = views[static_cast<std::size_t>(j)];

      // N_c pixels with finite gt depth, at pixel centers.
      std::vector<Eigen::Vector2d> pixels;
      int attempts = 0;
      const int max_attempts = cfg.n_pixels * 64;
      while (static_cast<int>(pixels.size()) < cfg.n_pixels && attempts < max_attempts) {
        ++attempts;
        const int x = pair_rng.uniform_int(vi.intr.width);
        const int y = pair_rng.uniform_int(vi.intr.height);
        if (!std::isfinite(vi.depth.at(y, x))) continue;
        pixels.emplace_back(x + 0.5, y + 0.5);
      }

      std::vector<Eigen::Vector2d> kept_p, kept_qp;
      std::vector<Eigen::Vector2d> kept_negs;  // flattened
      std::vector<double> kept_lambda;         // flattened
      for (std::size_t pix_idx = 0; pix_idx < pixels.size(); ++pix_idx) {
        const Eigen::Vector2d& p = pixels[pix_idx];
        const std::optional<Eigen::Vector2d> q_plus =
            make_positive_pair(p, vi.cam(), vi.depth, vj.cam(), vj.depth, cfg.eps_rel,
                               cfg.nearest_depth_lookup);
        std::vector<Eigen::Vector2d> negs;
        std::vector<double> lambda;
        if (q_plus || batch_out) {
          // per-pixel stream: dumping the batch must not shift later draws
          Rng neg_rng = pair_rng.fork(pix_idx);
          negs = cfg.geometric_negatives
                     ? make_negative_pairs(p, vi.cam(), vj.cam(), cfg.n_negatives, near,
                                           far, neg_rng)
                     : random_negative_baseline(vj.intr, cfg.n_negatives, neg_rng);
        }
        if (q_plus) {
          lambda = cfg.weighted
                       ? negative_weights(*q_plus, negs, cfg.tau_prime)
                       : std::vector<double>(static_cast<std::size_t>(cfg.n_negatives), 1.0);
          kept_p.push_back(p);
          kept_qp.push_back(*q_plus);
          kept_negs.insert(kept_negs.end(), negs.begin(), negs.end());
          kept_lambda.insert(kept_lambda.end(), lambda.begin(), lambda.end());
        }
        if (batch_out) {
          ContrastPair pair;
          pair.view_i = i;
          pair.view_j = j;
          pair.p = p;
          pair.q_plus = q_plus;
          pair.q_minus = negs;
          pair.lambda = lambda;
          batch_out->pairs.push_back(std::move(pair));
        }
      }

      const int m = static_cast<int>(kept_p.size());
      result.unoccluded += m;
      if (m == 0) continue;

      auto to_feature_pts = [&maps](const std::vector<Eigen::Vector2d>& px) {
        Mat pts(static_cast<int>(px.size()), 2);
        for (std::size_t k = 0; k < px.size(); ++k) {
          pts(static_cast<int>(k), 0) = px[k].x() / maps.stride;
          pts(static_cast<int>(k), 1) = px[k].y() / maps.stride;
        }
        return pts;
      };

      Var fi = maps.active()[static_cast<std::size_t>(i)];
      Var fj = maps.active()[static_cast<std::size_t>(j)];
      Var p_feat = grid_sample(fi, maps.height, maps.width, to_feature_pts(kept_p));
      Var qp_feat = grid_sample(fj, maps.height, maps.width, to_feature_pts(kept_qp));
      Var qn_feat = grid_sample(fj, maps.height, maps.width, to_feature_pts(kept_negs));
      if (cfg.normalize_features) {
        p_feat = l2_normalize_rows(p_feat);
        qp_feat = l2_normalize_rows(qp_feat);
        qn_feat = l2_normalize_rows(qn_feat);
      }

      Var pos_logit = mul_scalar_var(rowwise_dot(p_feat, qp_feat), inv_tau);  // m x 1
      Var p_rep = repeat_rows_grouped(p_feat, cfg.n_negatives);
      Var neg_dots = rowwise_dot(p_rep, qn_feat);                             // (m*Nneg) x 1
      Var neg_logits = reshape(mul_scalar_var(neg_dots, inv_tau), m, cfg.n_negatives);

      Mat log_lambda(m, cfg.n_negatives);
      for (int r = 0; r < m; ++r)
        for (int k = 0; k < cfg.n_negatives; ++k) {
          const double lam = kept_lambda[static_cast<std::size_t>(r * cfg.n_negatives + k)];
          log_lambda(r, k) = lam > 0 ? std::log(lam) : -745.0;  // exp() underflows to 0
        }
      Var weighted_negs = add(neg_logits, t.constant(log_lambda));
      Var lse = logsumexp_rows(concat_cols({pos_logit, weighted_negs}));
      Var per_pixel = sub(lse, pos_logit);
      pair_losses.push_back(mean_all(per_pixel));
      ++result.pairs_used;
    }
  }

  if (pair_losses.empty()) {
    result.loss = t.constant(Mat::Zero(1, 1));
    result.warned_empty = true;
    return result;
  }
  Var total = pair_losses[0];
  for (std::size_t k = 1; k < pair_losses.size(); ++k) total = add(total, pair_losses[k]);
  result.loss = scale(total, 1.0 / static_cast<double>(pair_losses.size()));
  return result;
}

}  // namespace geonvs
