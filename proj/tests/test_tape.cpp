// Copyright 2026 The geonvs Authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <functional>

#include "geonvs/rng.hpp"
#include "geonvs/tape.hpp"

using namespace geonvs;

namespace {

Mat random_mat(Rng& rng, int r, int c, double lo = -1.0, double hi = 1.0) {
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = rng.uniform(lo, hi);
  return m;
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

// Central-difference check of d(f)/d(x) for a scalar-valued builder f.
void check_grad(const Mat& x0, const std::function<Var(Tape&, Var)>& f,
                double tol = 5e-6, double h = 1e-5) {
  Tape t;
  Var x = t.leaf(x0);
  Var loss = f(t, x);
  REQUIRE(loss.rows() == 1);
  REQUIRE(loss.cols() == 1);
  t.backward(loss);
  Mat g = t.grad(x);

  auto eval = [&](const Mat& xv) {
    Tape tt;
    Var xx = tt.leaf(xv);
    return tt.val(f(tt, xx))(0, 0);
  };
  for (int i = 0; i < x0.rows(); ++i) {
    for (int j = 0; j < x0.cols(); ++j) {
      Mat xp = x0, xm = x0;
      xp(i, j) += h;
      xm(i, j) -= h;
      const double fd = (eval(xp) - eval(xm)) / (2.0 * h);
      INFO("entry (", i, ",", j, "): analytic=", g(i, j), " fd=", fd);
      CHECK(rel_err(g(i, j), fd) < tol);
    }
  }
}

}  // namespace

TEST_CASE("elementwise ops: values and gradients") {
  Rng rng(7);
  Mat a = random_mat(rng, 3, 4, 0.2, 1.5);  // positive: safe for log/pow
  Mat b = random_mat(rng, 3, 4, -1.0, 1.0);

  check_grad(a, [&](Tape& t, Var x) {
    Var c = t.constant(b);
    return sum_all(mul(add(x, c), sub(x, c)));
  });
  check_grad(a, [](Tape& t, Var x) {
    (void)t;
    return sum_all(scale(add_scalar(x, 0.7), -1.3));
  });
  check_grad(a, [](Tape& t, Var x) {
    (void)t;
    return sum_all(exp_v(scale(x, 0.5)));
  });
  check_grad(a, [](Tape& t, Var x) {
    (void)t;
    return sum_all(log_v(x));
  });
  check_grad(a, [](Tape& t, Var x) {
    (void)t;
    return sum_all(pow_v(x, -0.5));
  });
}

TEST_CASE("relu and clamp_min gradients away from kinks") {
  Mat x(2, 3);
  x << -0.9, 0.7, -0.3, 0.4, -1.2, 1.1;
  check_grad(x, [](Tape& t, Var v) {
    (void)t;
    return sum_all(relu(v));
  });
  check_grad(x, [](Tape& t, Var v) {
    (void)t;
    return sum_all(clamp_min_v(v, 0.05));
  });
}

TEST_CASE("matmul and transpose") {
  Rng rng(11);
  Mat a = random_mat(rng, 3, 5);
  Mat b = random_mat(rng, 5, 2);
  check_grad(a, [&](Tape& t, Var x) {
    return sum_all(matmul(x, t.constant(b)));
  });
  check_grad(b, [&](Tape& t, Var x) {
    return sum_all(matmul(t.constant(a), x));
  });
  check_grad(a, [](Tape& t, Var x) {
    (void)t;
    return sum_all(mul(transpose(x), transpose(x)));
  });
}

TEST_CASE("reductions and broadcasts") {
  Rng rng(13);
  Mat a = random_mat(rng, 4, 3);
  Mat rv = random_mat(rng, 1, 3);
  Mat cv = random_mat(rng, 4, 1);
  check_grad(a, [](Tape& t, Var x) { (void)t; return mean_all(x); });
  check_grad(a, [](Tape& t, Var x) { (void)t; return sum_all(mul(sum_rows(x), sum_rows(x))); });
  check_grad(a, [](Tape& t, Var x) { (void)t; return sum_all(mul(sum_cols(x), sum_cols(x))); });
  check_grad(a, [&](Tape& t, Var x) { return sum_all(exp_v(add_rowvec(x, t.constant(rv)))); });
  check_grad(rv, [&](Tape& t, Var x) { return sum_all(exp_v(add_rowvec(t.constant(a), x))); });
  check_grad(a, [&](Tape& t, Var x) { return sum_all(mul_rowvec(x, t.constant(rv))); });
  check_grad(rv, [&](Tape& t, Var x) { return sum_all(exp_v(mul_rowvec(t.constant(a), x))); });
  check_grad(cv, [&](Tape& t, Var x) { return sum_all(exp_v(mul_colvec(t.constant(a), x))); });
  Mat s(1, 1);
  s << 0.8;
  check_grad(s, [&](Tape& t, Var x) { return sum_all(exp_v(mul_scalar_var(t.constant(a), x))); });
}

TEST_CASE("shape ops") {
  Rng rng(17);
  Mat a = random_mat(rng, 4, 6);
  check_grad(a, [](Tape& t, Var x) {
    (void)t;
    Var r = reshape(x, 8, 3);
    return sum_all(mul(r, r));
  });
  check_grad(a, [](Tape& t, Var x) {
    (void)t;
    Var top = rows(x, 0, 2), bot = rows(x, 2, 2);
    Var l = cols(x, 0, 3), r = cols(x, 3, 3);
    return sum_all(mul(concat_rows({top, bot}), x)) +
           sum_all(mul(concat_cols({l, r}), x));
  });
  check_grad(a, [](Tape& t, Var x) {
    (void)t;
    Var rep = repeat_rows_grouped(x, 3);
    return sum_all(mul(rep, rep));
  });
  Mat big = random_mat(rng, 12, 2);
  check_grad(big, [](Tape& t, Var x) {
    (void)t;
    Var s = sum_row_groups(x, 3);
    return sum_all(mul(s, s));
  });
}

TEST_CASE("softmax_rows: normalization, masking, gradient") {
  Rng rng(19);
  Mat a = random_mat(rng, 5, 6, -2.0, 2.0);
  Tape t;
  Var x = t.constant(a);
  Var y = softmax_rows(x);
  for (int i = 0; i < 5; ++i) CHECK(t.val(y).row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));

  Mat mask = Mat::Ones(5, 6);
  mask(0, 0) = 0.0;
  mask(2, 3) = 0.0;
  mask.row(4).setZero();  // fully masked row
  Var ym = softmax_rows(x, &mask);
  CHECK(t.val(ym)(0, 0) == 0.0);
  CHECK(t.val(ym)(2, 3) == 0.0);
  CHECK(t.val(ym).row(4).cwiseAbs().sum() == 0.0);
  for (int i = 0; i < 4; ++i)
    CHECK(t.val(ym).row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));

  Mat w = random_mat(rng, 5, 6);
  check_grad(a, [&](Tape& tt, Var v) {
    return sum_all(mul(softmax_rows(v), tt.constant(w)));
  });
  check_grad(a, [&](Tape& tt, Var v) {
    return sum_all(mul(softmax_rows(v, &mask), tt.constant(w)));
  });
}

TEST_CASE("logsumexp_rows matches naive and differentiates") {
  Rng rng(23);
  Mat a = random_mat(rng, 4, 5, -3.0, 3.0);
  Tape t;
  Var y = logsumexp_rows(t.constant(a));
  for (int i = 0; i < 4; ++i) {
    const double naive = std::log(a.row(i).array().exp().sum());
    CHECK(t.val(y)(i, 0) == doctest::Approx(naive).epsilon(1e-12));
  }
  check_grad(a, [](Tape& tt, Var v) {
    (void)tt;
    Var l = logsumexp_rows(v);
    return sum_all(mul(l, l));
  });
}

TEST_CASE("rowwise_dot") {
  Rng rng(29);
  Mat a = random_mat(rng, 6, 4);
  Mat b = random_mat(rng, 6, 4);
  check_grad(a, [&](Tape& t, Var x) {
    Var d = rowwise_dot(x, t.constant(b));
    return sum_all(mul(d, d));
  });
  check_grad(b, [&](Tape& t, Var x) {
    Var d = rowwise_dot(t.constant(a), x);
    return sum_all(exp_v(d));
  });
}

TEST_CASE("grid_sample: exact at cell centers, bilinear between, gradient") {
  Rng rng(31);
  const int H = 4, W = 5, C = 3;
  Mat grid = random_mat(rng, H * W, C);
  Mat pts(3, 2);
  pts << 2.5, 1.5,   // center of cell (1,2)
      3.0, 1.5,      // halfway between cells (1,2) and (1,3)
      0.1, 0.1;      // clamped corner
  Tape t;
  Var g = t.constant(grid);
  Var s = grid_sample(g, H, W, pts);
  CHECK((t.val(s).row(0) - grid.row(1 * W + 2)).cwiseAbs().maxCoeff() < 1e-15);
  Mat mid = 0.5 * (grid.row(1 * W + 2) + grid.row(1 * W + 3));
  CHECK((t.val(s).row(1) - mid).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((t.val(s).row(2) - grid.row(0)).cwiseAbs().maxCoeff() < 1e-15);

  Mat qpts(7, 2);
  for (int i = 0; i < 7; ++i) {
    qpts(i, 0) = rng.uniform(0.0, W);
    qpts(i, 1) = rng.uniform(0.0, H);
  }
  check_grad(grid, [&](Tape& tt, Var v) {
    (void)tt;
    Var out = grid_sample(v, H, W, qpts);
    return sum_all(mul(out, out));
  });
}

TEST_CASE("conv3x3 matches direct loop and differentiates") {
  Rng rng(37);
  const int H = 5, W = 6, Cin = 2, Cout = 3;
  Mat img = random_mat(rng, H * W, Cin);
  Mat w = random_mat(rng, 9 * Cin, Cout);
  Mat b = random_mat(rng, 1, Cout);

  for (int stride : {1, 2}) {
    const int Ho = (H - 1) / stride + 1, Wo = (W - 1) / stride + 1;
    Tape t;
    Var y = conv3x3(t.constant(img), H, W, t.constant(w), t.constant(b), stride);
    REQUIRE(y.rows() == Ho * Wo);
    // direct loop oracle
    for (int oy = 0; oy < Ho; ++oy) {
      for (int ox = 0; ox < Wo; ++ox) {
        for (int co = 0; co < Cout; ++co) {
          double acc = b(0, co);
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = oy * stride + ky - 1, ix = ox * stride + kx - 1;
              if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
              for (int ci = 0; ci < Cin; ++ci)
                acc += img(iy * W + ix, ci) * w((ky * 3 + kx) * Cin + ci, co);
            }
          CHECK(t.val(y)(oy * Wo + ox, co) == doctest::Approx(acc).epsilon(1e-12));
        }
      }
    }
    check_grad(img, [&](Tape& tt, Var v) {
      return sum_all(exp_v(scale(
          conv3x3(v, H, W, tt.constant(w), tt.constant(b), stride), 0.3)));
    });
    check_grad(w, [&](Tape& tt, Var v) {
      return sum_all(exp_v(scale(
          conv3x3(tt.constant(img), H, W, v, tt.constant(b), stride), 0.3)));
    });
    check_grad(b, [&](Tape& tt, Var v) {
      return sum_all(exp_v(scale(
          conv3x3(tt.constant(img), H, W, tt.constant(w), v, stride), 0.3)));
    });
  }
}

TEST_CASE("upsample2x nearest with crop") {
  Rng rng(41);
  const int H = 3, W = 4;
  Mat a = random_mat(rng, H * W, 2);
  Tape t;
  Var y = upsample2x(t.constant(a), H, W, 5, 7);
  REQUIRE(y.rows() == 35);
  CHECK((t.val(y).row(0) - a.row(0)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((t.val(y).row(4 * 7 + 6) - a.row(2 * W + 3)).cwiseAbs().maxCoeff() == 0.0);
  check_grad(a, [&](Tape& tt, Var v) {
    (void)tt;
    Var u = upsample2x(v, H, W, 5, 7);
    return sum_all(mul(u, u));
  });
}

TEST_CASE("block attention ops") {
  Rng rng(43);
  const int S = 4, R = 3, d = 5;
  Mat q = random_mat(rng, R * S, d);
  Mat k = random_mat(rng, R * S, d);
  Mat v = random_mat(rng, R * S, d);

  Tape t;
  Var lg = block_attn_logits(t.constant(q), t.constant(k), S);
  for (int r = 0; r < R; ++r)
    for (int i = 0; i < S; ++i)
      for (int j = 0; j < S; ++j)
        CHECK(t.val(lg)(r * S + i, j) ==
              doctest::Approx(q.row(r * S + i).dot(k.row(r * S + j))).epsilon(1e-12));

  check_grad(q, [&](Tape& tt, Var x) {
    Var l = block_attn_logits(x, tt.constant(k), S);
    return sum_all(mul(l, l));
  });
  check_grad(k, [&](Tape& tt, Var x) {
    Var l = block_attn_logits(tt.constant(q), x, S);
    return sum_all(mul(l, l));
  });

  Mat attn = random_mat(rng, R * S, S, 0.0, 1.0);
  check_grad(attn, [&](Tape& tt, Var x) {
    Var o = block_attn_apply(x, tt.constant(v), S);
    return sum_all(mul(o, o));
  });
  check_grad(v, [&](Tape& tt, Var x) {
    Var o = block_attn_apply(tt.constant(attn), x, S);
    return sum_all(mul(o, o));
  });
}

TEST_CASE("composite: softmax-attention block end to end") {
  Rng rng(47);
  const int S = 3, R = 2, d = 4;
  Mat q = random_mat(rng, R * S, d);
  Mat k = random_mat(rng, R * S, d);
  Mat v = random_mat(rng, R * S, d);
  check_grad(q, [&](Tape& t, Var x) {
    Var lg = block_attn_logits(x, t.constant(k), S);
    Var a = softmax_rows(lg);
    Var o = block_attn_apply(a, t.constant(v), S);
    return sum_all(mul(o, o));
  }, 1e-5);
}

TEST_CASE("gradient accumulates across reuse") {
  Mat x(1, 1);
  x << 0.3;
  Tape t;
  Var v = t.leaf(x);
  Var y = add(mul(v, v), v);  // x^2 + x -> dy/dx = 2x + 1
  t.backward(sum_all(y));
  CHECK(t.grad(v)(0, 0) == doctest::Approx(1.6).epsilon(1e-12));
}
