// Copyright 2026 The geonvs Authors
// SPDX-License-Identifier: Apache-2.0
#include "geonvs/tape.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

namespace geonvs {

namespace {

void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument("tape: " + msg);
}

bool wants(Var v) { return v.tape->needs_grad(v.id); }

void same_tape(Var a, Var b) { check(a.tape == b.tape, "vars from different tapes"); }

}  // namespace

int Var::rows() const { return static_cast<int>(tape->val(*this).rows()); }
int Var::cols() const { return static_cast<int>(tape->val(*this).cols()); }

Var Tape::emit(Mat value, bool needs_grad, Backprop backprop) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Mat value) { return emit(std::move(value), false, {}); }

Var Tape::leaf(Mat value) { return emit(std::move(value), true, {}); }

Mat& Tape::grad_buf(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.grad_live) {
    n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    n.grad_live = true;
  }
  return n.grad;
}

const Mat& Tape::grad(Var v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (n.grad_live) return n.grad;
  const_cast<Tape*>(this)->zero_ = Mat::Zero(n.value.rows(), n.value.cols());
  return zero_;
}

void Tape::backward(Var loss) {
  check(loss.tape == this, "backward: var from another tape");
  check(val(loss).rows() == 1 && val(loss).cols() == 1, "backward: loss must be 1x1");
  grad_buf(loss.id)(0, 0) += 1.0;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.needs_grad && n.grad_live && n.backprop) n.backprop(*this, i);
  }
}

// ---------------------------------------------------------------- elementwise

Var add(Var a, Var b) {
  same_tape(a, b);
  check(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  Tape& t = *a.tape;
  bool ng = wants(a) || wants(b);
  int ia = a.id, ib = b.id;
  bool ga = wants(a), gb = wants(b);
  return t.emit(t.val(a) + t.val(b), ng, [ia, ib, ga, gb](Tape& tp, int self) {
    const Mat& g = tp.grad_buf(self);
    if (ga) tp.grad_buf(ia) += g;
    if (gb) tp.grad_buf(ib) += g;
  });
}

Var sub(Var a, Var b) {
  same_tape(a, b);
  check(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  Tape& t = *a.tape;
  bool ng = wants(a) || wants(b);
  int ia = a.id, ib = b.id;
  bool ga = wants(a), gb = wants(b);
  return t.emit(t.val(a) - t.val(b), ng, [ia, ib, ga, gb](Tape& tp, int self) {
    const Mat& g = tp.grad_buf(self);
    if (ga) tp.grad_buf(ia) += g;
    if (gb) tp.grad_buf(ib) -= g;
  });
}

Var mul(Var a, Var b) {
  same_tape(a, b);
  check(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  Tape& t = *a.tape;
  bool ng = wants(a) || wants(b);
  int ia = a.id, ib = b.id;
  bool ga = wants(a), gb = wants(b);
  return t.emit(t.val(a).cwiseProduct(t.val(b)), ng, [ia, ib, ga, gb](Tape& tp, int self) {
    const Mat& g = tp.grad_buf(self);
    if (ga) tp.grad_buf(ia) += g.cwiseProduct(tp.val(Var{&tp, ib}));
    if (gb) tp.grad_buf(ib) += g.cwiseProduct(tp.val(Var{&tp, ia}));
  });
}

Var scale(Var a, double k) {
  Tape& t = *a.tape;
  bool ng = wants(a);
  int ia = a.id;
  return t.emit(t.val(a) * k, ng, [ia, k](Tape& tp, int self) {
    tp.grad_buf(ia) += tp.grad_buf(self) * k;
  });
}

Var add_scalar(Var a, double k) {
  Tape& t = *a.tape;
  bool ng = wants(a);
  int ia = a.id;
  return t.emit((t.val(a).array() + k).matrix(), ng, [ia](Tape& tp, int self) {
    tp.grad_buf(ia) += tp.grad_buf(self);
  });
}

Var relu(Var a) {
  Tape& t = *a.tape;
  bool ng = wants(a);
  int ia = a.id;
  return t.emit(t.val(a).cwiseMax(0.0), ng, [ia](Tape& tp, int self) {
    const Mat& x = tp.val(Var{&tp, ia});
    tp.grad_buf(ia) += tp.grad_buf(self).cwiseProduct(
        (x.array() > 0.0).cast<double>().matrix());
  });
}

Var exp_v(Var a) {
  Tape& t = *a.tape;
  bool ng = wants(a);
  int ia = a.id;
  return t.emit(t.val(a).array().exp().matrix(), ng, [ia](Tape& tp, int self) {
    tp.grad_buf(ia) += tp.grad_buf(self).cwiseProduct(tp.val(Var{&tp, self}));
  });
}

Var log_v(Var a) {
  Tape& t = *a.tape;
  bool ng = wants(a);
  int ia = a.id;
  return t.emit(t.val(a).array().log().matrix(), ng, [ia](Tape& tp, int self) {
    tp.grad_buf(ia) += tp.grad_buf(self).cwiseQuotient(tp.val(Var{&tp, ia}));
  });
}

Var pow_v(Var a, double e) {
  Tape& t = *a.tape;
  bool ng = wants(a);
  int ia = a.id;
  return t.emit(t.val(a).array().pow(e).matrix(), ng, [ia, e](Tape& tp, int self) {
    const Mat& x = tp.val(Var{&tp, ia});
    tp.grad_buf(ia) +=
        tp.grad_buf(self).cwiseProduct((e * x.array().pow(e - 1.0)).matrix());
  });
}

Var clamp_min_v(Var a, double lo) {
  Tape& t = *a.tape;
  bool ng = wants(a);
  int ia = a.id;
  return t.emit(t.val(a).cwiseMax(lo), ng, [ia, lo](Tape& tp, int self) {
    const Mat& x = tp.val(Var{&tp, ia});
    tp.grad_buf(ia) += tp.grad_buf(self).cwiseProduct(
        (x.array() > lo).cast<double>().matrix());
  });
}

// --------------------------------------------------------------------- matrix

Var matmul(Var a, Var b) {
  same_tape(a, b);
  check(a.cols() == b.rows(), "matmul: inner dim mismatch");
  Tape& t = *a.tape;
  bool ng = wants(a) || wants(b);
  int ia = a.id, ib = b.id;
  bool ga = wants(a), gb = wants(b);
  return t.emit(t.val(a) * t.val(b), ng, [ia, ib, ga, gb](Tape& tp, int self) {
    const Mat& g = tp.grad_buf(self);
    if (ga) tp.grad_buf(ia) += g * tp.val(Var{&tp, ib}).transpose();
    if (gb) tp.grad_buf(ib) += tp.val(Var{&tp, ia}).transpose() * g;
  });
}

Var transpose(Var a) {
  Tape& t = *a.tape;
  bool ng = wants(a);
  int ia = a.id;
  return t.emit(t.val(a).transpose(), ng, [ia](Tape& tp, int self) {
    tp.grad_buf(ia) += tp.grad_buf(self).transpose();
  });
}

// ----------------------------------------------------------------- reductions

Var sum_all(Var a) {
  Tape& t = *a.tape;
  bool ng = wants(a);
  int ia = a.id;
  Mat y(1, 1);
  y(0, 0) = t.val(a).sum();
  return t.emit(std::move(y), ng, [ia](Tape& tp, int self) {
    tp.grad_buf(ia).array() += tp.grad_buf(self)(0, 0);
  });
}

Var mean_all(Var a) {
  const double n = static_cast<double>(a.rows()) * a.cols();
  return scale(sum_all(a), 1.0 / n);
}

Var sum_rows(Var a) {
  Tape& t = *a.tape;
  bool ng = wants(a);
  int ia = a.id;
  return t.emit(t.val(a).rowwise().sum(), ng, [ia](Tape& tp, int self) {
    const Mat& g = tp.grad_buf(self);
    Mat& ga = tp.grad_buf(ia);
    ga.colwise() += g.col(0);
  });
}

Var sum_cols(Var a) {
  Tape& t = *a.tape;
  bool ng = wants(a);
  int ia = a.id;
  return t.emit(t.val(a).colwise().sum(), ng, [ia](Tape& tp, int self) {
    const Mat& g = tp.grad_buf(self);
    Mat& ga = tp.grad_buf(ia);
    ga.rowwise() += g.row(0);
  });
}

// ----------------------------------------------------------------- broadcasts

Var add_rowvec(Var a, Var r) {
  same_tape(a, r);
  check(r.rows() == 1 && r.cols() == a.cols(), "add_rowvec: shape mismatch");
  Tape& t = *a.tape;
  bool ng = wants(a) || wants(r);
  int ia = a.id, ir = r.id;
  bool ga = wants(a), gr = wants(r);
  Mat y = t.val(a);
  y.rowwise() += t.val(r).row(0);
  return t.emit(std::move(y), ng, [ia, ir, ga, gr](Tape& tp, int self) {
    const Mat& g = tp.grad_buf(self);
    if (ga) tp.grad_buf(ia) += g;
    if (gr) tp.grad_buf(ir).row(0) += g.colwise().sum();
  });
}

Var mul_rowvec(Var a, Var r) {
  same_tape(a, r);
  check(r.rows() == 1 && r.cols() == a.cols(), "mul_rowvec: shape mismatch");
  Tape& t = *a.tape;
  bool ng = wants(a) || wants(r);
  int ia = a.id, ir = r.id;
  bool ga = wants(a), gr = wants(r);
  Mat y = (t.val(a).array().rowwise() * t.val(r).row(0).array()).matrix();
  return t.emit(std::move(y), ng, [ia, ir, ga, gr](Tape& tp, int self) {
    const Mat& g = tp.grad_buf(self);
    const Mat& x = tp.val(Var{&tp, ia});
    const Mat& rv = tp.val(Var{&tp, ir});
    if (ga) tp.grad_buf(ia) += (g.array().rowwise() * rv.row(0).array()).matrix();
    if (gr) tp.grad_buf(ir).row(0) += g.cwiseProduct(x).colwise().sum();
  });
}

Var mul_colvec(Var a, Var c) {
  same_tape(a, c);
  check(c.cols() == 1 && c.rows() == a.rows(), "mul_colvec: shape mismatch");
  Tape& t = *a.tape;
  bool ng = wants(a) || wants(c);
  int ia = a.id, ic = c.id;
  bool ga = wants(a), gc = wants(c);
  Mat y = (t.val(a).array().colwise() * t.val(c).col(0).array()).matrix();
  return t.emit(std::move(y), ng, [ia, ic, ga, gc](Tape& tp, int self) {
    const Mat& g = tp.grad_buf(self);
    const Mat& x = tp.val(Var{&tp, ia});
    const Mat& cv = tp.val(Var{&tp, ic});
    if (ga) tp.grad_buf(ia) += (g.array().colwise() * cv.col(0).array()).matrix();
    if (gc) tp.grad_buf(ic).col(0) += g.cwiseProduct(x).rowwise().sum();
  });
}

Var mul_scalar_var(Var a, Var s) {
  same_tape(a, s);
  check(s.rows() == 1 && s.cols() == 1, "mul_scalar_var: s must be 1x1");
  Tape& t = *a.tape;
  bool ng = wants(a) || wants(s);
  int ia = a.id, is = s.id;
  bool ga = wants(a), gs = wants(s);
  return t.emit(t.val(a) * t.val(s)(0, 0), ng, [ia, is, ga, gs](Tape& tp, int self) {
    const Mat& g = tp.grad_buf(self);
    if (ga) tp.grad_buf(ia) += g * tp.val(Var{&tp, is})(0, 0);
    if (gs) tp.grad_buf(is)(0, 0) += g.cwiseProduct(tp.val(Var{&tp, ia})).sum();
  });
}

// ---------------------------------------------------------------------- shape

Var reshape(Var a, int rows_, int cols_) {
  check(rows_ * cols_ == a.rows() * a.cols(), "reshape: element count mismatch");
  Tape& t = *a.tape;
  bool ng = wants(a);
  int ia = a.id;
  int ar = a.rows(), ac = a.cols();
  Mat y = Eigen::Map<const Mat>(t.val(a).data(), rows_, cols_);
  return t.emit(std::move(y), ng, [ia, ar, ac](Tape& tp, int self) {
    const Mat& g = tp.grad_buf(self);
    tp.grad_buf(ia) += Eigen::Map<const Mat>(g.data(), ar, ac);
  });
}

Var concat_cols(const std::vector<Var>& vs) {
  check(!vs.empty(), "concat_cols: empty");
  Tape& t = *vs[0].tape;
  int r = vs[0].rows(), ctot = 0;
  bool ng = false;
  for (Var v : vs) {
    check(v.tape == &t && v.rows() == r, "concat_cols: shape mismatch");
    ctot += v.cols();
    ng = ng || wants(v);
  }
  Mat y(r, ctot);
  std::vector<int> ids, offs, widths;
  int off = 0;
  for (Var v : vs) {
    y.middleCols(off, v.cols()) = t.val(v);
    ids.push_back(v.id);
    offs.push_back(off);
    widths.push_back(v.cols());
    off += v.cols();
  }
  return t.emit(std::move(y), ng, [ids, offs, widths](Tape& tp, int self) {
    const Mat& g = tp.grad_buf(self);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (tp.needs_grad(ids[i]))
        tp.grad_buf(ids[i]) += g.middleCols(offs[i], widths[i]);
    }
  });
}

Var concat_rows(const std::vector<Var>& vs) {
  check(!vs.empty(), "concat_rows: empty");
  Tape& t = *vs[0].tape;
  int c = vs[0].cols(), rtot = 0;
  bool ng = false;
  for (Var v : vs) {
    check(v.tape == &t && v.cols() == c, "concat_rows: shape mismatch");
    rtot += v.rows();
    ng = ng || wants(v);
  }
  Mat y(rtot, c);
  std::vector<int> ids, offs, heights;
  int off = 0;
  for (Var v : vs) {
    y.middleRows(off, v.rows()) = t.val(v);
    ids.push_back(v.id);
    offs.push_back(off);
    heights.push_back(v.rows());
    off += v.rows();
  }
  return t.emit(std::move(y), ng, [ids, offs, heights](Tape& tp, int self) {
    const Mat& g = tp.grad_buf(self);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (tp.needs_grad(ids[i]))
        tp.grad_buf(ids[i]) += g.middleRows(offs[i], heights[i]);
    }
  });
}

Var rows(Var a, int from, int n) {
  check(from >= 0 && from + n <= a.rows(), "rows: out of range");
  Tape& t = *a.tape;
  bool ng = wants(a);
  int ia = a.id;
  return t.emit(t.val(a).middleRows(from, n), ng, [ia, from, n](Tape& tp, int self) {
    tp.grad_buf(ia).middleRows(from, n) += tp.grad_buf(self);
  });
}

Var cols(Var a, int from, int n) {
  check(from >= 0 && from + n <= a.cols(), "cols: out of range");
  Tape& t = *a.tape;
  bool ng = wants(a);
  int ia = a.id;
  return t.emit(t.val(a).middleCols(from, n), ng, [ia, from, n](Tape& tp, int self) {
    tp.grad_buf(ia).middleCols(from, n) += tp.grad_buf(self);
  });
}

Var repeat_rows_grouped(Var a, int times) {
  check(times >= 1, "repeat_rows_grouped: times < 1");
  Tape& t = *a.tape;
  const Mat& x = t.val(a);
  const int r = static_cast<int>(x.rows()), c = static_cast<int>(x.cols());
  Mat y(r * times, c);
  for (int q = 0; q < r; ++q)
    y.middleRows(q * times, times).rowwise() = x.row(q);
  bool ng = wants(a);
  int ia = a.id;
  return t.emit(std::move(y), ng, [ia, times, r](Tape& tp, int self) {
    const Mat& g = tp.grad_buf(self);
    Mat& ga = tp.grad_buf(ia);
    for (int q = 0; q < r; ++q)
      ga.row(q) += g.middleRows(q * times, times).colwise().sum();
  });
}

Var sum_row_groups(Var a, int group) {
  check(group >= 1 && a.rows() % group == 0, "sum_row_groups: bad group");
  Tape& t = *a.tape;
  const Mat& x = t.val(a);
  const int r = static_cast<int>(x.rows()) / group;
  Mat y(r, x.cols());
  for (int q = 0; q < r; ++q)
    y.row(q) = x.middleRows(q * group, group).colwise().sum();
  bool ng = wants(a);
  int ia = a.id;
  return t.emit(std::move(y), ng, [ia, group, r](Tape& tp, int self) {
    const Mat& g = tp.grad_buf(self);
    Mat& ga = tp.grad_buf(ia);
    for (int q = 0; q < r; ++q)
      ga.middleRows(q * group, group).rowwise() += g.row(q);
  });
}

// ------------------------------------------------------------- softmax family

Var softmax_rows(Var a, const Mat* mask) {
  Tape& t = *a.tape;
  const Mat& x = t.val(a);
  const int r = static_cast<int>(x.rows()), c = static_cast<int>(x.cols());
  if (mask)
    check(mask->rows() == r && mask->cols() == c, "softmax_rows: mask shape");
  Mat y = Mat::Zero(r, c);
  for (int i = 0; i < r; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < c; ++j)
      if (!mask || (*mask)(i, j) != 0.0) m = std::max(m, x(i, j));
    if (!std::isfinite(m)) continue;  // fully masked row stays zero
    double z = 0.0;
    for (int j = 0; j < c; ++j)
      if (!mask || (*mask)(i, j) != 0.0) {
        y(i, j) = std::exp(x(i, j) - m);
        z += y(i, j);
      }
    y.row(i) /= z;
  }
  bool ng = wants(a);
  int ia = a.id;
  return t.emit(std::move(y), ng, [ia](Tape& tp, int self) {
    const Mat& g = tp.grad_buf(self);
    const Mat& y = tp.val(Var{&tp, self});
    Mat dot = g.cwiseProduct(y).rowwise().sum();  // Rx1
    Mat dx = y.cwiseProduct(g - dot.replicate(1, g.cols()));
    tp.grad_buf(ia) += dx;
  });
}

Var logsumexp_rows(Var a) {
  Tape& t = *a.tape;
  const Mat& x = t.val(a);
  const int r = static_cast<int>(x.rows());
  Mat y(r, 1);
  for (int i = 0; i < r; ++i) {
    const double m = x.row(i).maxCoeff();
    y(i, 0) = m + std::log((x.row(i).array() - m).exp().sum());
  }
  bool ng = wants(a);
  int ia = a.id;
  return t.emit(std::move(y), ng, [ia](Tape& tp, int self) {
    const Mat& g = tp.grad_buf(self);
    const Mat& x = tp.val(Var{&tp, ia});
    const Mat& y = tp.val(Var{&tp, self});
    Mat soft = (x.array().colwise() - y.col(0).array()).exp();
    tp.grad_buf(ia) += (soft.array().colwise() * g.col(0).array()).matrix();
  });
}

Var rowwise_dot(Var a, Var b) {
  same_tape(a, b);
  check(a.rows() == b.rows() && a.cols() == b.cols(), "rowwise_dot: shape mismatch");
  Tape& t = *a.tape;
  bool ng = wants(a) || wants(b);
  int ia = a.id, ib = b.id;
  bool ga = wants(a), gb = wants(b);
  Mat y = t.val(a).cwiseProduct(t.val(b)).rowwise().sum();
  return t.emit(std::move(y), ng, [ia, ib, ga, gb](Tape& tp, int self) {
    const Mat& g = tp.grad_buf(self);
    if (ga)
      tp.grad_buf(ia) +=
          (tp.val(Var{&tp, ib}).array().colwise() * g.col(0).array()).matrix();
    if (gb)
      tp.grad_buf(ib) +=
          (tp.val(Var{&tp, ia}).array().colwise() * g.col(0).array()).matrix();
  });
}

// -------------------------------------------------------------- grid sampling

namespace {

struct BilinearTap {
  int i00, i01, i10, i11;  // rows into the grid
  double w00, w01, w10, w11;
};

BilinearTap bilinear_tap(double x, double y, int H, int W) {
  double fx = std::min(std::max(x - 0.5, 0.0), static_cast<double>(W - 1));
  double fy = std::min(std::max(y - 0.5, 0.0), static_cast<double>(H - 1));
  int x0 = std::min(static_cast<int>(std::floor(fx)), W - 1);
  int y0 = std::min(static_cast<int>(std::floor(fy)), H - 1);
  int x1 = std::min(x0 + 1, W - 1);
  int y1 = std::min(y0 + 1, H - 1);
  double wx = fx - x0, wy = fy - y0;
  BilinearTap tap;
  tap.i00 = y0 * W + x0;
  tap.i01 = y0 * W + x1;
  tap.i10 = y1 * W + x0;
  tap.i11 = y1 * W + x1;
  tap.w00 = (1 - wy) * (1 - wx);
  tap.w01 = (1 - wy) * wx;
  tap.w10 = wy * (1 - wx);
  tap.w11 = wy * wx;
  return tap;
}

}  // namespace

Var grid_sample(Var grid, int H, int W, const Mat& pts) {
  Tape& t = *grid.tape;
  check(grid.rows() == H * W, "grid_sample: grid rows != H*W");
  check(pts.cols() == 2, "grid_sample: pts must be Nx2");
  const Mat& g = t.val(grid);
  const int n = static_cast<int>(pts.rows());
  const int c = static_cast<int>(g.cols());
  Mat y(n, c);
  auto taps = std::make_shared<std::vector<BilinearTap>>();
  taps->reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    BilinearTap tap = bilinear_tap(pts(i, 0), pts(i, 1), H, W);
    y.row(i) = tap.w00 * g.row(tap.i00) + tap.w01 * g.row(tap.i01) +
               tap.w10 * g.row(tap.i10) + tap.w11 * g.row(tap.i11);
    taps->push_back(tap);
  }
  bool ng = wants(grid);
  int ig = grid.id;
  return t.emit(std::move(y), ng, [ig, taps](Tape& tp, int self) {
    const Mat& gout = tp.grad_buf(self);
    Mat& ggrid = tp.grad_buf(ig);
    for (std::size_t i = 0; i < taps->size(); ++i) {
      const BilinearTap& tap = (*taps)[i];
      const auto row = gout.row(static_cast<int>(i));
      ggrid.row(tap.i00) += tap.w00 * row;
      ggrid.row(tap.i01) += tap.w01 * row;
      ggrid.row(tap.i10) += tap.w10 * row;
      ggrid.row(tap.i11) += tap.w11 * row;
    }
  });
}

// ---------------------------------------------------------------- convolution

namespace {

int conv_out(int n, int stride) { return (n - 1) / stride + 1; }

// Patch layout: column (ky*3+kx)*Cin + ci.
Mat im2col3x3(const Mat& img, int H, int W, int stride) {
  const int cin = static_cast<int>(img.cols());
  const int ho = conv_out(H, stride), wo = conv_out(W, stride);
  Mat cols = Mat::Zero(ho * wo, 9 * cin);
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      const int orow = oy * wo + ox;
      for (int ky = 0; ky < 3; ++ky) {
        const int iy = oy * stride + ky - 1;
        if (iy < 0 || iy >= H) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int ix = ox * stride + kx - 1;
          if (ix < 0 || ix >= W) continue;
          cols.block(orow, (ky * 3 + kx) * cin, 1, cin) = img.row(iy * W + ix);
        }
      }
    }
  }
  return cols;
}

void col2im3x3(const Mat& dcols, int H, int W, int cin, int stride, Mat& dimg) {
  const int ho = conv_out(H, stride), wo = conv_out(W, stride);
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      const int orow = oy * wo + ox;
      for (int ky = 0; ky < 3; ++ky) {
        const int iy = oy * stride + ky - 1;
        if (iy < 0 || iy >= H) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int ix = ox * stride + kx - 1;
          if (ix < 0 || ix >= W) continue;
          dimg.row(iy * W + ix) += dcols.block(orow, (ky * 3 + kx) * cin, 1, cin);
        }
      }
    }
  }
}

}  // namespace

Var conv3x3(Var img, int H, int W, Var w, Var b, int stride) {
  same_tape(img, w);
  same_tape(img, b);
  Tape& t = *img.tape;
  const int cin = img.cols();
  check(img.rows() == H * W, "conv3x3: img rows != H*W");
  check(w.rows() == 9 * cin, "conv3x3: weight rows != 9*Cin");
  check(b.rows() == 1 && b.cols() == w.cols(), "conv3x3: bias shape");
  check(stride == 1 || stride == 2, "conv3x3: stride must be 1 or 2");
  auto cols_cache = std::make_shared<Mat>(im2col3x3(t.val(img), H, W, stride));
  Mat y = (*cols_cache) * t.val(w);
  y.rowwise() += t.val(b).row(0);
  bool ng = wants(img) || wants(w) || wants(b);
  int ii = img.id, iw = w.id, ib = b.id;
  bool gi = wants(img), gw = wants(w), gb = wants(b);
  return t.emit(std::move(y), ng,
                [ii, iw, ib, gi, gw, gb, cols_cache, H, W, cin, stride](Tape& tp, int self) {
    const Mat& g = tp.grad_buf(self);
    if (gw) tp.grad_buf(iw) += cols_cache->transpose() * g;
    if (gb) tp.grad_buf(ib).row(0) += g.colwise().sum();
    if (gi) {
      Mat dcols = g * tp.val(Var{&tp, iw}).transpose();
      col2im3x3(dcols, H, W, cin, stride, tp.grad_buf(ii));
    }
  });
}

Var upsample2x(Var a, int H, int W, int outH, int outW) {
  Tape& t = *a.tape;
  check(a.rows() == H * W, "upsample2x: rows != H*W");
  check(outH <= 2 * H && outW <= 2 * W, "upsample2x: output too large");
  const Mat& x = t.val(a);
  Mat y(outH * outW, x.cols());
  for (int oy = 0; oy < outH; ++oy)
    for (int ox = 0; ox < outW; ++ox)
      y.row(oy * outW + ox) = x.row((oy / 2) * W + (ox / 2));
  bool ng = wants(a);
  int ia = a.id;
  return t.emit(std::move(y), ng, [ia, W, outH, outW](Tape& tp, int self) {
    const Mat& g = tp.grad_buf(self);
    Mat& ga = tp.grad_buf(ia);
    for (int oy = 0; oy < outH; ++oy)
      for (int ox = 0; ox < outW; ++ox)
        ga.row((oy / 2) * W + (ox / 2)) += g.row(oy * outW + ox);
  });
}

// ------------------------------------------------------------ block attention

Var block_attn_logits(Var q, Var k, int S) {
  same_tape(q, k);
  check(q.rows() == k.rows() && q.cols() == k.cols(), "block_attn_logits: shape");
  check(S >= 1 && q.rows() % S == 0, "block_attn_logits: rows % S != 0");
  Tape& t = *q.tape;
  const Mat& qv = t.val(q);
  const Mat& kv = t.val(k);
  const int nb = static_cast<int>(qv.rows()) / S;
  Mat y(qv.rows(), S);
  for (int r = 0; r < nb; ++r)
    y.middleRows(r * S, S) =
        qv.middleRows(r * S, S) * kv.middleRows(r * S, S).transpose();
  bool ng = wants(q) || wants(k);
  int iq = q.id, ik = k.id;
  bool gq = wants(q), gk = wants(k);
  return t.emit(std::move(y), ng, [iq, ik, gq, gk, S, nb](Tape& tp, int self) {
    const Mat& g = tp.grad_buf(self);
    const Mat& qv = tp.val(Var{&tp, iq});
    const Mat& kv = tp.val(Var{&tp, ik});
    for (int r = 0; r < nb; ++r) {
      const auto gb = g.middleRows(r * S, S);
      if (gq) tp.grad_buf(iq).middleRows(r * S, S) += gb * kv.middleRows(r * S, S);
      if (gk)
        tp.grad_buf(ik).middleRows(r * S, S) += gb.transpose() * qv.middleRows(r * S, S);
    }
  });
}

Var block_attn_apply(Var attn, Var v, int S) {
  same_tape(attn, v);
  check(attn.cols() == S, "block_attn_apply: attn cols != S");
  check(attn.rows() == v.rows() && v.rows() % S == 0, "block_attn_apply: shape");
  Tape& t = *attn.tape;
  const Mat& av = t.val(attn);
  const Mat& vv = t.val(v);
  const int nb = static_cast<int>(av.rows()) / S;
  Mat y(vv.rows(), vv.cols());
  for (int r = 0; r < nb; ++r)
    y.middleRows(r * S, S) = av.middleRows(r * S, S) * vv.middleRows(r * S, S);
  bool ng = wants(attn) || wants(v);
  int ia = attn.id, iv = v.id;
  bool ga = wants(attn), gv = wants(v);
  return t.emit(std::move(y), ng, [ia, iv, ga, gv, S, nb](Tape& tp, int self) {
    const Mat& g = tp.grad_buf(self);
    const Mat& av = tp.val(Var{&tp, ia});
    const Mat& vv = tp.val(Var{&tp, iv});
    for (int r = 0; r < nb; ++r) {
      const auto gb = g.middleRows(r * S, S);
      if (ga)
        tp.grad_buf(ia).middleRows(r * S, S) += gb * vv.middleRows(r * S, S).transpose();
      if (gv)
        tp.grad_buf(iv).middleRows(r * S, S) += av.middleRows(r * S, S).transpose() * gb;
    }
  });
}

}  // namespace geonvs
