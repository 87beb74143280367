// Copyright 2026 The geonvs Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

namespace geonvs {

// Row-major everywhere: reshape and row-group ops are then plain memory views.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Tape;

// Handle into a Tape node. Cheap to copy; valid for the tape's lifetime.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
  int rows() const;
  int cols() const;
};

// Reverse-mode autodiff over dense double matrices. One Tape per forward
// pass; nodes are created in topological order and walked backwards once.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Mat value);  // no gradient tracking
  Var leaf(Mat value);      // gradient leaf (parameters, probed inputs)

  const Mat& val(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  // Zero matrix if the node never received gradient. Valid after backward().
  const Mat& grad(Var v) const;

  // Seeds d(loss)/d(loss) = 1 and accumulates gradients into every
  // grad-tracking node reachable from `loss`. `loss` must be 1x1.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

  // Internal plumbing shared with the op implementations.
  using Backprop = std::function<void(Tape&, int self)>;
  Var emit(Mat value, bool needs_grad, Backprop backprop);
  Mat& grad_buf(int id);  // allocate-on-demand accumulator
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

 private:
  struct Node {
    Mat value;
    Mat grad;  // allocated lazily during backward
    bool needs_grad = false;
    bool grad_live = false;
    Backprop backprop;  // may be empty
  };

  std::vector<Node> nodes_;
  Mat zero_;
};

// ---- elementwise & scalar ----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double k);
Var add_scalar(Var a, double k);
Var relu(Var a);
Var exp_v(Var a);
Var log_v(Var a);
Var pow_v(Var a, double e);
Var clamp_min_v(Var a, double lo);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

// ---- matrix ----
Var matmul(Var a, Var b);
Var transpose(Var a);

// ---- reductions ----
Var sum_all(Var a);   // 1x1
Var mean_all(Var a);  // 1x1
Var sum_rows(Var a);  // Rx1
Var sum_cols(Var a);  // 1xC

// ---- broadcasts ----
Var add_rowvec(Var a, Var r);      // a: RxC, r: 1xC
Var mul_rowvec(Var a, Var r);
Var mul_colvec(Var a, Var c);      // a: RxC, c: Rx1
Var mul_scalar_var(Var a, Var s);  // s: 1x1

// ---- shape ----
Var reshape(Var a, int rows, int cols);
Var concat_cols(const std::vector<Var>& vs);
Var concat_rows(const std::vector<Var>& vs);
Var rows(Var a, int from, int n);
Var cols(Var a, int from, int n);
Var repeat_rows_grouped(Var a, int times);  // row q -> rows q*times .. q*times+times-1
Var sum_row_groups(Var a, int group);       // inverse reduction of the above

// ---- softmax family ----
// Row softmax; entries where mask==0 get exactly zero weight. A fully
// masked row yields an all-zero row. mask may be nullptr (all valid).
Var softmax_rows(Var a, const Mat* mask = nullptr);
Var logsumexp_rows(Var a);      // Rx1, max-subtraction stabilized
Var rowwise_dot(Var a, Var b);  // Rx1

// ---- structured ops for grids and attention ----
// grid: (H*W)xC feature grid, row r*W+c is cell (r,c) whose sample point is
// (c+0.5, r+0.5). pts: Nx2 (x,y) continuous coords, border-clamped bilinear.
Var grid_sample(Var grid, int H, int W, const Mat& pts);
// 3x3 conv, zero padding 1. img: (H*W)xCin, w: (9*Cin)xCout, b: 1xCout.
// Output: (Ho*Wo)xCout with Ho=floor((H-1)/stride)+1.
Var conv3x3(Var img, int H, int W, Var w, Var b, int stride);
// Nearest-neighbor 2x upsample of an (H*W)xC grid, cropped to outH x outW.
Var upsample2x(Var a, int H, int W, int outH, int outW);
// Block attention over contiguous row blocks of size S (rows/S blocks):
// logits[r*S+i, j] = q[r*S+i] . k[r*S+j]
Var block_attn_logits(Var q, Var k, int S);
// out[r*S+i] = sum_j attn[r*S+i, j] * v[r*S+j]
Var block_attn_apply(Var attn, Var v, int S);

}  // namespace geonvs
