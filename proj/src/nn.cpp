// Copyright 2026 The geonvs Authors
// SPDX-License-Identifier: Apache-2.0
#include "geonvs/nn.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>

namespace geonvs {

ParamTensor& ParamStore::create(const std::string& name, int rows, int cols,
                                double init_scale, Rng& rng) {
  if (params_.count(name))
    throw std::invalid_argument("ParamStore: duplicate parameter " + name);
  ParamTensor p;
  p.value = Mat(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) p.value(r, c) = rng.uniform(-init_scale, init_scale);
  p.grad = Mat::Zero(rows, cols);
  p.m = Mat::Zero(rows, cols);
  p.v = Mat::Zero(rows, cols);
  return params_.emplace(name, std::move(p)).first->second;
}

ParamTensor& ParamStore::create_const(const std::string& name, int rows, int cols,
                                      double fill) {
  if (params_.count(name))
    throw std::invalid_argument("ParamStore: duplicate parameter " + name);
  ParamTensor p;
  p.value = Mat::Constant(rows, cols, fill);
  p.grad = Mat::Zero(rows, cols);
  p.m = Mat::Zero(rows, cols);
  p.v = Mat::Zero(rows, cols);
  return params_.emplace(name, std::move(p)).first->second;
}

ParamTensor& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::invalid_argument("ParamStore: unknown parameter " + name);
  return it->second;
}

const ParamTensor& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::invalid_argument("ParamStore: unknown parameter " + name);
  return it->second;
}

void ParamStore::zero_grad() {
  for (auto& [name, p] : params_) p.grad.setZero();
}

Var ParamBinder::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  Var v = tape_->leaf(store_->at(name).value);
  bound_.emplace(name, v);
  return v;
}

void ParamBinder::accumulate_grads() {
  for (const auto& [name, var] : bound_) store_->at(name).grad += tape_->grad(var);
}

void Adam::step(ParamStore& store) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& [name, p] : store.all()) {
    p.m = cfg_.beta1 * p.m + (1.0 - cfg_.beta1) * p.grad;
    p.v = (cfg_.beta2 * p.v.array() + (1.0 - cfg_.beta2) * p.grad.array().square()).matrix();
    const Mat mhat = p.m / bc1;
    const Mat vhat = p.v / bc2;
    p.value -= (cfg_.lr * mhat.array() / (vhat.array().sqrt() + cfg_.eps)).matrix();
  }
}

// ---- layers -----------------------------------------------------------

Linear::Linear(ParamStore& store, Rng& rng, const std::string& name, int in, int out,
               bool bias)
    : name_(name), in_(in), out_(out), bias_(bias) {
  const double k = std::sqrt(1.0 / in);
  store.create(name + ".w", in, out, k, rng);
  if (bias) store.create(name + ".b", 1, out, k, rng);
}

Var Linear::operator()(ParamBinder& pb, Var x) const {
  Var y = matmul(x, pb(name_ + ".w"));
  if (bias_) y = add_rowvec(y, pb(name_ + ".b"));
  return y;
}

InstanceNorm::InstanceNorm(ParamStore& store, const std::string& name, int channels)
    : name_(name), channels_(channels) {
  store.create_const(name + ".gamma", 1, channels, 1.0);
  store.create_const(name + ".beta", 1, channels, 0.0);
}

Var InstanceNorm::operator()(ParamBinder& pb, Var x) const {
  const double n = static_cast<double>(x.rows());
  Var mu = scale(sum_cols(x), 1.0 / n);                       // 1 x C
  Var xc = add_rowvec(x, scale(mu, -1.0));                    // centered
  Var var = scale(sum_cols(mul(xc, xc)), 1.0 / n);            // biased variance
  Var inv = pow_v(add_scalar(var, 1e-5), -0.5);               // 1 x C
  Var y = mul_rowvec(xc, inv);
  return add_rowvec(mul_rowvec(y, pb(name_ + ".gamma")), pb(name_ + ".beta"));
}

Conv3x3::Conv3x3(ParamStore& store, Rng& rng, const std::string& name, int in, int out)
    : name_(name), in_(in), out_(out) {
  const double k = std::sqrt(1.0 / (9.0 * in));
  store.create(name + ".w", 9 * in, out, k, rng);
  store.create(name + ".b", 1, out, k, rng);
}

Var Conv3x3::operator()(ParamBinder& pb, Var img, int H, int W, int stride) const {
  return conv3x3(img, H, W, pb(name_ + ".w"), pb(name_ + ".b"), stride);
}

Mha::Mha(ParamStore& store, Rng& rng, const std::string& name, const MhaConfig& cfg)
    : name_(name), cfg_(cfg) {
  if (cfg.dim % cfg.heads != 0)
    throw std::invalid_argument("Mha: dim must be divisible by heads");
  const double k = std::sqrt(1.0 / cfg.dim);
  store.create(name + ".wq", cfg.dim, cfg.dim, k, rng);
  store.create(name + ".wk", cfg.dim, cfg.dim, k, rng);
  store.create(name + ".wv", cfg.dim, cfg.dim, k, rng);
  store.create(name + ".wo", cfg.dim, cfg.dim, k, rng);
  if (cfg.mode == AttentionMode::kSubtraction) {
    store.create(name + ".mlp1.w", cfg.dim, cfg.dim, k, rng);
    store.create(name + ".mlp1.b", 1, cfg.dim, k, rng);
    store.create(name + ".mlp2.w", cfg.dim, cfg.heads, k, rng);
    store.create(name + ".mlp2.b", 1, cfg.heads, k, rng);
  }
}

Var Mha::operator()(ParamBinder& pb, Var q, Var kv, int S, const Mat* mask,
                    std::vector<Mat>* attn_out) const {
  if (q.cols() != cfg_.dim || kv.cols() != cfg_.dim)
    throw std::invalid_argument("Mha: input dimension mismatch");
  if (kv.rows() != q.rows() * S) throw std::invalid_argument("Mha: kv rows != N*S");
  Tape& t = pb.tape();
  const int n = q.rows();
  const int dh = cfg_.dim / cfg_.heads;

  Var qp = matmul(q, pb(name_ + ".wq"));
  Var kp = matmul(kv, pb(name_ + ".wk"));
  Var vp = matmul(kv, pb(name_ + ".wv"));
  Var qrep = repeat_rows_grouped(qp, S);  // (N*S) x dim

  std::vector<Var> head_outputs;
  std::vector<Var> head_logits;  // each N x S
  head_outputs.reserve(static_cast<std::size_t>(cfg_.heads));
  head_logits.reserve(static_cast<std::size_t>(cfg_.heads));

  if (cfg_.mode == AttentionMode::kDotProduct) {
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int h = 0; h < cfg_.heads; ++h) {
      Var qh = cols(qrep, h * dh, dh);
      Var kh = cols(kp, h * dh, dh);
      Var logits = scale(rowwise_dot(qh, kh), inv_sqrt);  // (N*S) x 1
      head_logits.push_back(reshape(logits, n, S));
    }
  } else {
    Var diff = sub(qrep, kp);  // (N*S) x dim
    Var hidden = relu(add_rowvec(matmul(diff, pb(name_ + ".mlp1.w")), pb(name_ + ".mlp1.b")));
    Var logits_all =
        add_rowvec(matmul(hidden, pb(name_ + ".mlp2.w")), pb(name_ + ".mlp2.b"));
    for (int h = 0; h < cfg_.heads; ++h)
      head_logits.push_back(reshape(cols(logits_all, h, 1), n, S));
  }

  for (int h = 0; h < cfg_.heads; ++h) {
    Var attn = softmax_rows(head_logits[static_cast<std::size_t>(h)], mask);  // N x S
    if (attn_out) attn_out->push_back(t.val(attn));
    Var w_flat = reshape(attn, n * S, 1);
    Var vh = cols(vp, h * dh, dh);
    head_outputs.push_back(sum_row_groups(mul_colvec(vh, w_flat), S));  // N x dh
  }
  return matmul(concat_cols(head_outputs), pb(name_ + ".wo"));
}

Mat sinusoidal_positions(int n, int dim) {
  Mat pe = Mat::Zero(n, dim);
  for (int pos = 0; pos < n; ++pos) {
    for (int k = 0; 2 * k < dim; ++k) {
      const double omega = std::pow(10000.0, -2.0 * k / static_cast<double>(dim));
      pe(pos, 2 * k) = std::sin(pos * omega);
      if (2 * k + 1 < dim) pe(pos, 2 * k + 1) = std::cos(pos * omega);
    }
  }
  return pe;
}

// ---- checkpoints ------------------------------------------------------

namespace {

constexpr char kCkptMagic[8] = {'G', 'N', 'V', 'S', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCkptVersion = 1;

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& store,
                     const nlohmann::json& config) {
  nlohmann::json header;
  header["schema_version"] = kCkptVersion;
  header["config"] = config;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [name, p] : store.all()) {
    tensors.push_back({{"name", name},
                       {"rows", p.value.rows()},
                       {"cols", p.value.cols()}});
  }
  header["tensors"] = tensors;
  const std::string header_str = header.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  f.write(kCkptMagic, 8);
  const std::uint64_t hlen = header_str.size();
  f.write(reinterpret_cast<const char*>(&hlen), 8);
  f.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const auto& [name, p] : store.all())
    f.write(reinterpret_cast<const char*>(p.value.data()),
            static_cast<std::streamsize>(sizeof(double) * p.value.size()));
  if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

nlohmann::json load_checkpoint(const std::string& path, ParamStore* store) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kCkptMagic, 8) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  std::uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), 8);
  std::string header_str(hlen, '\0');
  f.read(header_str.data(), static_cast<std::streamsize>(hlen));
  nlohmann::json header = nlohmann::json::parse(header_str);
  if (header.at("schema_version").get<std::uint32_t>() != kCkptVersion)
    throw std::runtime_error("load_checkpoint: unsupported schema version");

  for (const auto& tj : header.at("tensors")) {
    const std::string name = tj.at("name").get<std::string>();
    const int rows = tj.at("rows").get<int>();
    const int cols = tj.at("cols").get<int>();
    ParamTensor p;
    p.value = Mat(rows, cols);
    f.read(reinterpret_cast<char*>(p.value.data()),
           static_cast<std::streamsize>(sizeof(double) * p.value.size()));
    p.grad = Mat::Zero(rows, cols);
    p.m = Mat::Zero(rows, cols);
    p.v = Mat::Zero(rows, cols);
    if (store->has(name))
      store->at(name) = std::move(p);
    else
      store->all().emplace(name, std::move(p));
  }
  if (!f) throw std::runtime_error("load_checkpoint: truncated file " + path);
  return header.at("config");
}

}  // namespace geonvs
