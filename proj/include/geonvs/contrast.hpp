// Copyright 2026 The geonvs Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "geonvs/feature_net.hpp"
#include "geonvs/scene_io.hpp"

namespace geonvs {

struct ContrastConfig {
  int n_pixels = 576;      // N_c, sampled per ordered view pair
  int n_negatives = 512;   // N_neg
  double tau_init = 0.1;   // learnable temperature, stored as log tau
  double tau_min = 0.01;
  double tau_prime = 10000.0;  // fixed pixel-distance temperature
  bool normalize_features = true;
  bool weighted = true;             // lambda weights vs all-ones
  bool geometric_negatives = true;  // epipolar projections vs uniform pixels
  double eps_rel = 0.01;            // occlusion depth tolerance
  bool nearest_depth_lookup = false;
};

// lambda_k = N_neg * exp(||q_plus - q_minus_k|| / tau_prime) / sum_j exp(...)
// Non-negative, sums to N_neg, monotone in pixel distance.
std::vector<double> negative_weights(const Eigen::Vector2d& q_plus,
                                     const std::vector<Eigen::Vector2d>& q_minus,
                                     double tau_prime);

// Single-pair loss, max-subtraction stabilized:
//   -log( e^{p.q+ / tau} / (e^{p.q+ / tau} + sum_k lambda_k e^{p.q-_k / tau}) )
// Features are used as given (callers normalize when configured).
double weighted_info_nce(const Eigen::VectorXd& p_feat, const Eigen::VectorXd& q_plus_feat,
                         const std::vector<Eigen::VectorXd>& q_minus_feats,
                         const std::vector<double>& lambda, double tau);

// Uniform random pixels in view j; the "Random negative sampling" ablation.
std::vector<Eigen::Vector2d> random_negative_baseline(const CameraIntrinsics& view_j,
                                                      int n_neg, Rng& rng);

// One sampled pixel with its correspondences, for the debug dump.
struct ContrastPair {
  int view_i = 0, view_j = 0;
  Eigen::Vector2d p;
  std::optional<Eigen::Vector2d> q_plus;
  std::vector<Eigen::Vector2d> q_minus;
  std::vector<double> lambda;
};

struct ContrastBatch {
  std::vector<ContrastPair> pairs;
};

std::string contrast_batch_to_json(const ContrastBatch& batch);

// Registers the learnable log-temperature parameter.
void register_contrast_params(ParamStore& store, const ContrastConfig& cfg);

struct ContrastResult {
  Var loss;             // 1x1
  int pairs_used = 0;   // ordered pairs with >= 1 unoccluded pixel
  int unoccluded = 0;   // total unoccluded pixels across pairs
  bool warned_empty = false;
};

// Full Eq. 7/8/9 pipeline over every ordered pair of source views, using the
// enhanced feature maps (or base maps when attention is off). Occluded pixels
// contribute nothing; a batch with no usable pixel returns a constant 0 and
// sets warned_empty. `batch_out`, when given, receives the sampled pairs.
ContrastResult contrastive_loss(ParamBinder& pb, const FeatureMaps& maps,
                                const std::vector<CameraView>& views, double near,
                                double far, const ContrastConfig& cfg, Rng& rng,
                                ContrastBatch* batch_out = nullptr);

}  // namespace geonvs
