// Copyright 2026 The geonvs Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "geonvs/camera.hpp"
#include "geonvs/nn.hpp"
#include "geonvs/rng.hpp"

namespace geonvs::testutil {

// Central-difference check of d(loss)/d(param) against the tape gradient for
// a strided subset of entries of each named parameter. Returns the max
// relative error. `f` must be a pure function of the store contents.
inline double param_grad_max_rel_err(ParamStore& store,
                                     const std::vector<std::string>& params,
                                     const std::function<Var(ParamBinder&)>& f,
                                     int entries_per_param = 4, double h = 1e-5) {
  store.zero_grad();
  double f0 = 0.0;
  {
    Tape t;
    ParamBinder pb(t, store);
    Var loss = f(pb);
    f0 = t.val(loss)(0, 0);
    t.backward(loss);
    pb.accumulate_grads();
  }
  auto eval = [&]() {
    Tape t;
    ParamBinder pb(t, store);
    return t.val(f(pb))(0, 0);
  };
  // central differences carry ~eps*|f|/h cancellation noise; entries whose
  // true gradient sits below that are compared against an absolute floor
  const double atol = 1e-6 * std::max(1.0, std::abs(f0));
  double worst = 0.0;
  for (const std::string& name : params) {
    ParamTensor& p = store.at(name);
    const int n = static_cast<int>(p.value.size());
    const int step = std::max(1, n / entries_per_param);
    for (int k = 0; k < n; k += step) {
      double* x = p.value.data() + k;
      const double x0 = *x;
      *x = x0 + h;
      const double fp = eval();
      *x = x0 - h;
      const double fm = eval();
      *x = x0;
      const double fd = (fp - fm) / (2 * h);
      const double g = p.grad.data()[k];
      worst = std::max(worst, std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), atol}));
    }
  }
  return worst;
}

// Max orthogonal residual of a total-least-squares 2D line fit.
inline double line_fit_max_residual(const std::vector<Eigen::Vector2d>& pts) {
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (const auto& p : pts) {
    const Eigen::Vector2d d = p - mean;
    cov += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(cov);
  const Eigen::Vector2d normal = eig.eigenvectors().col(0);  // smallest eigenvalue
  double worst = 0.0;
  for (const auto& p : pts) worst = std::max(worst, std::abs(normal.dot(p - mean)));
  return worst;
}

inline Eigen::Matrix3d random_rotation(Rng& rng) {
  Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  q.normalize();
  return q.toRotationMatrix();
}

inline CameraExtrinsics random_pose(Rng& rng, double span = 3.0) {
  CameraExtrinsics extr;
  extr.R = random_rotation(rng);
  extr.t = Eigen::Vector3d(rng.uniform(-span, span), rng.uniform(-span, span),
                           rng.uniform(-span, span));
  return extr;
}

}  // namespace geonvs::testutil
