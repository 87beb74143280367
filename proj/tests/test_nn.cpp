// Copyright 2026 The geonvs Authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "geonvs/nn.hpp"
#include "test_util.hpp"

using namespace geonvs;

namespace {

Mat random_mat(Rng& rng, int r, int c, double lo = -1.0, double hi = 1.0) {
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = rng.uniform(lo, hi);
  return m;
}

}  // namespace

TEST_CASE("Linear and Conv3x3 and InstanceNorm gradients") {
  Rng rng(5);
  ParamStore store;
  Linear lin(store, rng, "lin", 6, 4);
  Conv3x3 conv(store, rng, "conv", 2, 3);
  InstanceNorm inorm(store, "in", 3);
  const Mat x = random_mat(rng, 5, 6);
  const Mat img = random_mat(rng, 4 * 5, 2);

  const double err = testutil::param_grad_max_rel_err(
      store, {"lin.w", "lin.b", "conv.w", "conv.b", "in.gamma", "in.beta"},
      [&](ParamBinder& pb) {
        Var a = lin(pb, pb.tape().constant(x));
        Var b = inorm(pb, conv(pb, pb.tape().constant(img), 4, 5, 1));
        return add(sum_all(mul(a, a)), sum_all(mul(b, b)));
      });
  CHECK(err < 1e-5);
}

TEST_CASE("InstanceNorm normalizes per channel") {
  Rng rng(7);
  ParamStore store;
  InstanceNorm inorm(store, "in", 2);
  const Mat x = random_mat(rng, 64, 2, -3.0, 5.0);
  Tape t;
  ParamBinder pb(t, store);
  Var y = inorm(pb, t.constant(x));
  for (int c = 0; c < 2; ++c) {
    const double mean = t.val(y).col(c).mean();
    const double var = (t.val(y).col(c).array() - mean).square().mean();
    CHECK(std::abs(mean) < 1e-10);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // biased, eps-regularized
  }
}

TEST_CASE("Mha: weight normalization, masking, collapse cases") {
  for (AttentionMode mode : {AttentionMode::kDotProduct, AttentionMode::kSubtraction}) {
    CAPTURE(static_cast<int>(mode));
    Rng rng(11);
    ParamStore store;
    MhaConfig cfg{8, 2, mode};
    Mha mha(store, rng, "mha", cfg);
    const int N = 3, S = 5;
    const Mat q = random_mat(rng, N, 8);
    const Mat kv = random_mat(rng, N * S, 8);

    Tape t;
    ParamBinder pb(t, store);
    std::vector<Mat> attn;
    Var out = mha(pb, t.constant(q), t.constant(kv), S, nullptr, &attn);
    REQUIRE(out.rows() == N);
    REQUIRE(out.cols() == 8);
    REQUIRE(attn.size() == 2);
    for (const Mat& a : attn)
      for (int i = 0; i < N; ++i)
        CHECK(a.row(i).sum() == doctest::Approx(1.0).epsilon(1e-6));

    // masked keys get exactly zero weight; fully masked row -> zero output
    Mat mask = Mat::Ones(N, S);
    mask(0, 2) = 0;
    mask.row(2).setZero();
    std::vector<Mat> attn_m;
    Var out_m = mha(pb, t.constant(q), t.constant(kv), S, &mask, &attn_m);
    for (const Mat& a : attn_m) {
      CHECK(a(0, 2) == 0.0);
      CHECK(a.row(2).cwiseAbs().sum() == 0.0);
    }
    CHECK(t.val(out_m).row(2).cwiseAbs().sum() == 0.0);

    // one key: weight 1 on it
    std::vector<Mat> attn_1;
    (void)mha(pb, t.constant(q), t.constant(random_mat(rng, N, 8)), 1, nullptr, &attn_1);
    for (const Mat& a : attn_1)
      for (int i = 0; i < N; ++i) CHECK(a(i, 0) == doctest::Approx(1.0).epsilon(1e-12));

    // identical keys collapse to the single-key output
    Mat kv_same(N * S, 8);
    Mat kv_one(N, 8);
    for (int i = 0; i < N; ++i) {
      const Mat row = random_mat(rng, 1, 8);
      kv_one.row(i) = row.row(0);
      for (int s = 0; s < S; ++s) kv_same.row(i * S + s) = row.row(0);
    }
    Var out_same = mha(pb, t.constant(q), t.constant(kv_same), S);
    Var out_one = mha(pb, t.constant(q), t.constant(kv_one), 1);
    CHECK((t.val(out_same) - t.val(out_one)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("Mha gradients (both modes)") {
  for (AttentionMode mode : {AttentionMode::kDotProduct, AttentionMode::kSubtraction}) {
    Rng rng(13);
    ParamStore store;
    MhaConfig cfg{8, 2, mode};
    Mha mha(store, rng, "mha", cfg);
    const Mat q = random_mat(rng, 3, 8);
    const Mat kv = random_mat(rng, 12, 8);
    std::vector<std::string> params = {"mha.wq", "mha.wk", "mha.wv", "mha.wo"};
    if (mode == AttentionMode::kSubtraction)
      for (const char* p : {"mha.mlp1.w", "mha.mlp1.b", "mha.mlp2.w", "mha.mlp2.b"})
        params.push_back(p);
    const double err = testutil::param_grad_max_rel_err(
        store, params, [&](ParamBinder& pb) {
          Var out = mha(pb, pb.tape().constant(q), pb.tape().constant(kv), 4);
          return sum_all(mul(out, out));
        });
    CHECK(err < 1e-6);
  }
}

TEST_CASE("gradient flows to every grouped key through attention") {
  Rng rng(17);
  ParamStore store;
  Mha mha(store, rng, "mha", MhaConfig{8, 2, AttentionMode::kSubtraction});
  const int N = 2, S = 3;
  Tape t;
  ParamBinder pb(t, store);
  Var kv = t.leaf(random_mat(rng, N * S, 8));
  Var out = mha(pb, t.constant(random_mat(rng, N, 8)), kv, S);
  t.backward(sum_all(mul(out, out)));
  const Mat g = t.grad(kv);
  for (int r = 0; r < N * S; ++r) CHECK(g.row(r).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("Adam: zero gradient leaves fresh parameters unchanged") {
  Rng rng(19);
  ParamStore store;
  store.create("p", 2, 3, 0.5, rng);
  const Mat before = store.at("p").value;
  Adam opt(AdamConfig{});
  opt.step(store);  // grads are zero
  CHECK((store.at("p").value - before).cwiseAbs().maxCoeff() == 0.0);

  // a fresh optimizer's first step has the closed form lr * g/(|g| + eps)
  Adam fresh(AdamConfig{});
  store.at("p").grad = random_mat(rng, 2, 3);
  const Mat g = store.at("p").grad;
  fresh.step(store);
  const AdamConfig cfg;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) {
      const double expect =
          before(i, j) - cfg.lr * g(i, j) / (std::abs(g(i, j)) + cfg.eps);
      CHECK(store.at("p").value(i, j) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("checkpoint round-trip is bitwise") {
  Rng rng(23);
  ParamStore store;
  store.create("a", 3, 4, 1.0, rng);
  store.create("b.w", 2, 2, 0.3, rng);
  nlohmann::json cfg;
  cfg["note"] = "test";
  cfg["lr"] = 1e-3;
  const std::string path = (std::filesystem::temp_directory_path() / "gnvs_ckpt_test.bin").string();
  save_checkpoint(path, store, cfg);

  ParamStore loaded;
  nlohmann::json cfg2 = load_checkpoint(path, &loaded);
  CHECK(cfg2 == cfg);
  REQUIRE(loaded.size() == store.size());
  for (const auto& [name, p] : store.all()) {
    REQUIRE(loaded.has(name));
    const Mat& lv = loaded.at(name).value;
    REQUIRE(lv.rows() == p.value.rows());
    for (int i = 0; i < p.value.rows(); ++i)
      for (int j = 0; j < p.value.cols(); ++j)
        CHECK(std::memcmp(&lv(i, j), &p.value(i, j), sizeof(double)) == 0);
  }
  std::filesystem::remove(path);
}

TEST_CASE("sinusoidal_positions basic structure") {
  const Mat pe = sinusoidal_positions(5, 8);
  CHECK(pe.rows() == 5);
  CHECK(pe.cols() == 8);
  CHECK(pe(0, 0) == 0.0);  // sin(0)
  CHECK(pe(0, 1) == 1.0);  // cos(0)
  CHECK(pe.cwiseAbs().maxCoeff() <= 1.0);
  CHECK((pe.row(1) - pe.row(2)).cwiseAbs().maxCoeff() > 1e-3);
}
