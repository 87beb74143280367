// Copyright 2026 The geonvs Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>
#include <map>
#include <string>
#include <vector>

#include "geonvs/rng.hpp"
#include "geonvs/tape.hpp"

namespace geonvs {

struct ParamTensor {
  Mat value;
  Mat grad;
  Mat m, v;  // Adam moments
};

// Named parameter tensors. Iteration order is the sorted name order, which
// keeps optimizer updates and checkpoints deterministic.
class ParamStore {
 public:
  ParamTensor& create(const std::string& name, int rows, int cols, double init_scale,
                      Rng& rng);
  ParamTensor& create_const(const std::string& name, int rows, int cols, double fill);
  ParamTensor& at(const std::string& name);
  const ParamTensor& at(const std::string& name) const;
  bool has(const std::string& name) const { return params_.count(name) > 0; }
  void zero_grad();
  std::size_t size() const { return params_.size(); }
  std::map<std::string, ParamTensor>& all() { return params_; }
  const std::map<std::string, ParamTensor>& all() const { return params_; }

 private:
  std::map<std::string, ParamTensor> params_;
};

// Binds store parameters into one tape, one leaf per parameter, so repeated
// layer applications share gradient accumulation.
class ParamBinder {
 public:
  ParamBinder(Tape& tape, ParamStore& store) : tape_(&tape), store_(&store) {}
  Var operator()(const std::string& name);
  // Adds each bound leaf's tape gradient into the store gradient.
  void accumulate_grads();
  Tape& tape() { return *tape_; }

 private:
  Tape* tape_;
  ParamStore* store_;
  std::map<std::string, Var> bound_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(const AdamConfig& cfg) : cfg_(cfg) {}
  void step(ParamStore& store);
  long steps_taken() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
};

// ---- layers -----------------------------------------------------------

class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& store, Rng& rng, const std::string& name, int in, int out,
         bool bias = true);
  Var operator()(ParamBinder& pb, Var x) const;  // (N x in) -> (N x out)
  int out_dim() const { return out_; }

 private:
  std::string name_;
  int in_ = 0, out_ = 0;
  bool bias_ = true;
};

// Per-channel instance normalization with affine parameters; statistics are
// over the rows (spatial positions) of one view.
class InstanceNorm {
 public:
  InstanceNorm() = default;
  InstanceNorm(ParamStore& store, const std::string& name, int channels);
  Var operator()(ParamBinder& pb, Var x) const;

 private:
  std::string name_;
  int channels_ = 0;
};

class Conv3x3 {
 public:
  Conv3x3() = default;
  Conv3x3(ParamStore& store, Rng& rng, const std::string& name, int in, int out);
  Var operator()(ParamBinder& pb, Var img, int H, int W, int stride) const;

 private:
  std::string name_;
  int in_ = 0, out_ = 0;
};

enum class AttentionMode { kSubtraction, kDotProduct };

struct MhaConfig {
  int dim = 32;  // model/inner dimension; divisible by heads
  int heads = 4;
  AttentionMode mode = AttentionMode::kSubtraction;
};

// Multi-head attention over grouped keys: query row n attends to key rows
// n*S .. n*S+S-1. Masked keys get exactly zero weight; a fully masked row
// yields a zero output row.
class Mha {
 public:
  Mha() = default;
  Mha(ParamStore& store, Rng& rng, const std::string& name, const MhaConfig& cfg);
  // q: N x dim, kv: (N*S) x dim, mask: optional N x S (1 = attend).
  // attn_out, when given, receives one N x S weight matrix per head.
  Var operator()(ParamBinder& pb, Var q, Var kv, int S, const Mat* mask = nullptr,
                 std::vector<Mat>* attn_out = nullptr) const;
  const MhaConfig& config() const { return cfg_; }

 private:
  std::string name_;
  MhaConfig cfg_;
};

// Transformer-style sinusoidal embedding of ordinal positions 0..n-1.
Mat sinusoidal_positions(int n, int dim);

// ---- checkpoints ------------------------------------------------------

// Single-archive format: magic, format version, JSON header (config +
// tensor directory), then raw little-endian float64 tensor data.
void save_checkpoint(const std::string& path, const ParamStore& store,
                     const nlohmann::json& config);
nlohmann::json load_checkpoint(const std::string& path, ParamStore* store);

}  // namespace geonvs
