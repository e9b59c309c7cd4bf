#include "capslab/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <numeric>

#include "capslab/kernels.hpp"

namespace capslab::ops {
namespace {

using kern::ops;

void check_same_tape(const char* op, TRef a, TRef b) {
  if (a.tape != b.tape) throw Error(std::string(op) + ": operands on different tapes");
}

// ---------------------------------------------------------------------------
// broadcasting machinery
//
// Shapes are right-aligned numpy style. Dimensions are coalesced so the
// inner loop runs over the longest contiguous stretch possible; each run is
// then one of vector-vector, scalar-vector or vector-scalar.

struct BcastPlan {
  Shape out;
  std::vector<std::int64_t> ext;  // coalesced extents, outer->inner
  std::vector<std::int64_t> sa, sb;
};

BcastPlan make_bcast(const char* op, const Shape& sa, const Shape& sb) {
  const std::size_t nd = std::max(sa.size(), sb.size());
  Shape a(nd, 1), b(nd, 1), out(nd, 1);
  std::copy(sa.begin(), sa.end(), a.begin() + (nd - sa.size()));
  std::copy(sb.begin(), sb.end(), b.begin() + (nd - sb.size()));
  for (std::size_t d = 0; d < nd; ++d) {
    if (a[d] != b[d] && a[d] != 1 && b[d] != 1) throw ShapeError(op, sa, sb);
    out[d] = std::max(a[d], b[d]);
  }
  const auto sta = shape_strides(a);
  const auto stb = shape_strides(b);
  BcastPlan p;
  p.out = out;
  for (std::size_t d = 0; d < nd; ++d) {
    if (out[d] == 1 && nd > 1) continue;  // drop unit dims (keep one for scalar case)
    p.ext.push_back(out[d]);
    p.sa.push_back(a[d] == 1 ? 0 : sta[d]);
    p.sb.push_back(b[d] == 1 ? 0 : stb[d]);
  }
  if (p.ext.empty()) {
    p.ext.push_back(1);
    p.sa.push_back(0);
    p.sb.push_back(0);
  }
  // coalesce adjacent dims when both operands are contiguous across the pair
  std::vector<std::int64_t> ext{p.ext[0]}, ca{p.sa[0]}, cb{p.sb[0]};
  for (std::size_t d = 1; d < p.ext.size(); ++d) {
    const bool mergeable = ca.back() == p.sa[d] * p.ext[d] && cb.back() == p.sb[d] * p.ext[d];
    if (mergeable) {
      ext.back() *= p.ext[d];
      ca.back() = p.sa[d];
      cb.back() = p.sb[d];
    } else {
      ext.push_back(p.ext[d]);
      ca.push_back(p.sa[d]);
      cb.push_back(p.sb[d]);
    }
  }
  p.ext = std::move(ext);
  p.sa = std::move(ca);
  p.sb = std::move(cb);
  return p;
}

// Walks all runs of the plan; run(aoff, boff, ooff, n, sa_inner, sb_inner).
template <typename F>
void for_each_run(const BcastPlan& p, F&& run) {
  const std::size_t nd = p.ext.size();
  const std::int64_t inner = p.ext[nd - 1];
  const std::int64_t sa_in = p.sa[nd - 1], sb_in = p.sb[nd - 1];
  std::int64_t outer = 1;
  for (std::size_t d = 0; d + 1 < nd; ++d) outer *= p.ext[d];
  std::vector<std::int64_t> c(nd, 0);
  std::int64_t ao = 0, bo = 0, oo = 0;
  for (std::int64_t it = 0; it < outer; ++it) {
    run(ao, bo, oo, inner, sa_in, sb_in);
    oo += inner;
    for (std::size_t d = nd - 1; d-- > 0;) {
      ++c[d];
      ao += p.sa[d];
      bo += p.sb[d];
      if (c[d] < p.ext[d]) break;
      ao -= p.sa[d] * p.ext[d];
      bo -= p.sb[d] * p.ext[d];
      c[d] = 0;
    }
  }
}

enum class BinKind { add, sub, mul };

void run_binary(BinKind k, const double* a, std::int64_t sa, const double* b, std::int64_t sb,
                double* o, std::int64_t n) {
  const auto& kk = ops();
  if (sa == 1 && sb == 1) {
    switch (k) {
      case BinKind::add: kk.add(a, b, o, static_cast<std::size_t>(n)); return;
      case BinKind::sub: kk.sub(a, b, o, static_cast<std::size_t>(n)); return;
      case BinKind::mul: kk.mul(a, b, o, static_cast<std::size_t>(n)); return;
    }
  }
  for (std::int64_t i = 0; i < n; ++i) {
    const double av = a[i * sa], bv = b[i * sb];
    o[i] = k == BinKind::add ? av + bv : (k == BinKind::sub ? av - bv : av * bv);
  }
}

Tensor bcast_eval(BinKind k, const BcastPlan& p, const Tensor& a, const Tensor& b) {
  Tensor out = Tensor::uninit(p.out);
  for_each_run(p, [&](std::int64_t ao, std::int64_t bo, std::int64_t oo, std::int64_t n,
                      std::int64_t sa, std::int64_t sb) {
    run_binary(k, a.data() + ao, sa, b.data() + bo, sb, out.data() + oo, n);
  });
  return out;
}

// tmp[out] = g[out] * operand[operand-index]; use_b picks which operand slot
// of the plan supplies the strides
Tensor mul_with_operand(const BcastPlan& p, const Tensor& g, const Tensor& operand, bool use_b) {
  Tensor tmp = Tensor::uninit(p.out);
  for_each_run(p, [&](std::int64_t ao, std::int64_t bo, std::int64_t oo, std::int64_t n,
                      std::int64_t sa, std::int64_t sb) {
    const std::int64_t so = use_b ? sb : sa;
    const double* op = operand.data() + (use_b ? bo : ao);
    const double* gp = g.data() + oo;
    double* o = tmp.data() + oo;
    if (so == 1) {
      ops().mul(gp, op, o, static_cast<std::size_t>(n));
    } else if (so == 0) {
      ops().scale(gp, *op, o, static_cast<std::size_t>(n));
    } else {
      for (std::int64_t i = 0; i < n; ++i) o[i] = gp[i] * op[i * so];
    }
  });
  return tmp;
}

// target[a-index] += g[out-index], reducing over broadcast dims of the plan's
// "a" slot. Used by broadcast backward passes.
void reduce_into(const BcastPlan& p, const Tensor& g, Tensor& target, double sign = 1.0) {
  const auto& kk = ops();
  for_each_run(p, [&](std::int64_t ao, std::int64_t, std::int64_t oo, std::int64_t n,
                      std::int64_t sa, std::int64_t) {
    const double* src = g.data() + oo;
    double* dst = target.data() + ao;
    if (sa == 1) {
      kk.axpy(sign, src, dst, static_cast<std::size_t>(n));
    } else if (sa == 0) {
      *dst += sign * kk.sum(src, static_cast<std::size_t>(n));
    } else {
      for (std::int64_t i = 0; i < n; ++i) dst[i * sa] += sign * src[i];
    }
  });
}

// plan with a/b swapped so reduce_into can target the b operand
BcastPlan swap_plan(const BcastPlan& p) {
  BcastPlan q = p;
  std::swap(q.sa, q.sb);
  return q;
}

TRef binary_op(const char* name, BinKind k, TRef a, TRef b) {
  check_same_tape(name, a, b);
  Tape& t = *a.tape;
  const BcastPlan plan = make_bcast(name, a.shape(), b.shape());
  Tensor out = bcast_eval(k, plan, a.value(), b.value());
  const bool rg = a.requires_grad() || b.requires_grad();
  const auto ai = a.idx, bi = b.idx;
  // record first so the closure can capture the output index
  TRef out_ref = t.record(name, std::move(out), rg, nullptr);
  if (rg) {
    const auto self = out_ref.idx;
    t.at(self).back = [k, plan, ai, bi, self](Tape& tp) {
      const Tensor& g = tp.at(self).grad;
      if (tp.at(ai).requires_grad) {
        if (k == BinKind::mul) {
          Tensor tmp = mul_with_operand(plan, g, tp.at(bi).value, /*use_b=*/true);
          reduce_into(plan, tmp, tp.grad_buf(ai));
        } else {
          reduce_into(plan, g, tp.grad_buf(ai));
        }
      }
      if (tp.at(bi).requires_grad) {
        if (k == BinKind::mul) {
          Tensor tmp = mul_with_operand(plan, g, tp.at(ai).value, /*use_b=*/false);
          reduce_into(swap_plan(plan), tmp, tp.grad_buf(bi));
        } else {
          reduce_into(swap_plan(plan), g, tp.grad_buf(bi), k == BinKind::sub ? -1.0 : 1.0);
        }
      }
    };
  }
  return out_ref;
}

// generic unary elementwise: y = f(x), dx += df(x, y) * dy
template <typename Fwd, typename Bwd>
TRef unary_op(const char* name, TRef x, Fwd fwd, Bwd bwd) {
  Tape& t = *x.tape;
  const Tensor& xv = x.value();
  Tensor out = Tensor::uninit(xv.shape());
  const std::int64_t n = xv.numel();
  for (std::int64_t i = 0; i < n; ++i) out[i] = fwd(xv[i]);
  const bool rg = x.requires_grad();
  TRef out_ref = t.record(name, std::move(out), rg, nullptr);
  if (rg) {
    const auto xi = x.idx, self = out_ref.idx;
    t.at(self).back = [xi, self, bwd, n](Tape& tp) {
      if (!tp.at(xi).requires_grad) return;
      const Tensor& g = tp.at(self).grad;
      const Tensor& xv = tp.at(xi).value;
      const Tensor& yv = tp.at(self).value;
      Tensor& dx = tp.grad_buf(xi);
      for (std::int64_t i = 0; i < n; ++i) dx[i] += bwd(xv[i], yv[i]) * g[i];
    };
  }
  return out_ref;
}

}  // namespace

// ---------------------------------------------------------------------------
// elementwise

TRef add(TRef a, TRef b) { return binary_op("add", BinKind::add, a, b); }
TRef sub(TRef a, TRef b) { return binary_op("sub", BinKind::sub, a, b); }
TRef mul(TRef a, TRef b) { return binary_op("mul", BinKind::mul, a, b); }

TRef scale(TRef x, double c) {
  return unary_op("scale", x, [c](double v) { return c * v; },
                  [c](double, double) { return c; });
}

TRef add_scalar(TRef x, double c) {
  return unary_op("add_scalar", x, [c](double v) { return v + c; },
                  [](double, double) { return 1.0; });
}

TRef relu(TRef x) {
  return unary_op("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
                  [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

TRef tanh(TRef x) {
  return unary_op("tanh", x, [](double v) { return std::tanh(v); },
                  [](double, double y) { return 1.0 - y * y; });
}

TRef arctanh(TRef x) {
  const Tensor& xv = x.value();
  for (std::int64_t i = 0; i < xv.numel(); ++i)
    if (!(xv[i] > -1.0 && xv[i] < 1.0))
      throw DomainError("arctanh: input " + std::to_string(xv[i]) + " outside (-1, 1)");
  return unary_op("arctanh", x, [](double v) { return std::atanh(v); },
                  [](double v, double) { return 1.0 / (1.0 - v * v); });
}

TRef sigmoid(TRef x) {
  return unary_op("sigmoid", x,
                  [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
                  [](double, double y) { return y * (1.0 - y); });
}

TRef sqrt(TRef x) {
  const Tensor& xv = x.value();
  for (std::int64_t i = 0; i < xv.numel(); ++i)
    if (xv[i] < 0.0) throw DomainError("sqrt: negative input " + std::to_string(xv[i]));
  return unary_op("sqrt", x, [](double v) { return std::sqrt(v); },
                  [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

TRef square(TRef x) {
  return unary_op("square", x, [](double v) { return v * v; },
                  [](double v, double) { return 2.0 * v; });
}

TRef reciprocal(TRef x) {
  return unary_op("reciprocal", x, [](double v) { return 1.0 / v; },
                  [](double, double y) { return -y * y; });
}

TRef sign(TRef x) {
  // backward contributes zero by convention
  return unary_op("sign", x,
                  [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); },
                  [](double, double) { return 0.0; });
}

TRef clamp(TRef x, double lo, double hi) {
  if (!(lo <= hi)) throw DomainError("clamp: lo > hi");
  return unary_op("clamp", x,
                  [lo, hi](double v) { return std::min(std::max(v, lo), hi); },
                  [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// linear algebra

TRef matmul(TRef a, TRef b) {
  check_same_tape("matmul", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.ndim() != 2 || bv.ndim() != 2 || av.dim(1) != bv.dim(0))
    throw ShapeError("matmul", av.shape(), bv.shape());
  const std::size_t m = static_cast<std::size_t>(av.dim(0));
  const std::size_t k = static_cast<std::size_t>(av.dim(1));
  const std::size_t n = static_cast<std::size_t>(bv.dim(1));
  Tensor out({av.dim(0), bv.dim(1)});
  ops().gemm_nn(av.data(), k, bv.data(), n, out.data(), n, m, n, k);
  const bool rg = a.requires_grad() || b.requires_grad();
  Tape& t = *a.tape;
  TRef out_ref = t.record("matmul", std::move(out), rg, nullptr);
  if (rg) {
    const auto ai = a.idx, bi = b.idx, self = out_ref.idx;
    t.at(self).back = [ai, bi, self, m, n, k](Tape& tp) {
      const Tensor& g = tp.at(self).grad;
      const Tensor& av = tp.at(ai).value;
      const Tensor& bv = tp.at(bi).value;
      if (tp.at(ai).requires_grad)  // dA += G * B^T
        ops().gemm_nt(g.data(), n, bv.data(), n, tp.grad_buf(ai).data(), k, m, k, n);
      if (tp.at(bi).requires_grad)  // dB += A^T * G
        ops().gemm_tn(av.data(), k, g.data(), n, tp.grad_buf(bi).data(), n, k, n, m);
    };
  }
  return out_ref;
}

namespace {

struct ConvDims {
  std::int64_t B, Cin, H, W, Cout, kh, kw, OH, OW, P, K;
  int stride, pad;
};

ConvDims conv_dims(const char* op, const Shape& xs, const Shape& ws, int stride, int pad) {
  if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[1]) throw ShapeError(op, xs, ws);
  if (stride < 1 || pad < 0) throw ShapeError(op, "invalid stride/pad");
  ConvDims d;
  d.B = xs[0];
  d.Cin = xs[1];
  d.H = xs[2];
  d.W = xs[3];
  d.Cout = ws[0];
  d.kh = ws[2];
  d.kw = ws[3];
  d.stride = stride;
  d.pad = pad;
  if (d.H + 2 * pad < d.kh || d.W + 2 * pad < d.kw)
    throw ShapeError(op, "kernel larger than padded input");
  d.OH = (d.H + 2 * pad - d.kh) / stride + 1;
  d.OW = (d.W + 2 * pad - d.kw) / stride + 1;
  d.P = d.OH * d.OW;
  d.K = d.Cin * d.kh * d.kw;
  return d;
}

// row-per-output-pixel patch matrix for one image
void im2col(const ConvDims& d, const double* x, double* col) {
  for (std::int64_t oy = 0; oy < d.OH; ++oy) {
    for (std::int64_t ox = 0; ox < d.OW; ++ox) {
      double* row = col + (oy * d.OW + ox) * d.K;
      for (std::int64_t c = 0; c < d.Cin; ++c) {
        const double* xc = x + c * d.H * d.W;
        for (std::int64_t ky = 0; ky < d.kh; ++ky) {
          const std::int64_t iy = oy * d.stride + ky - d.pad;
          double* dst = row + (c * d.kh + ky) * d.kw;
          if (iy < 0 || iy >= d.H) {
            std::fill(dst, dst + d.kw, 0.0);
            continue;
          }
          const std::int64_t ix0 = ox * d.stride - d.pad;
          if (ix0 >= 0 && ix0 + d.kw <= d.W) {
            std::memcpy(dst, xc + iy * d.W + ix0, sizeof(double) * static_cast<std::size_t>(d.kw));
          } else {
            for (std::int64_t kx = 0; kx < d.kw; ++kx) {
              const std::int64_t ix = ix0 + kx;
              dst[kx] = (ix >= 0 && ix < d.W) ? xc[iy * d.W + ix] : 0.0;
            }
          }
        }
      }
    }
  }
}

void col2im_acc(const ConvDims& d, const double* col, double* dx) {
  for (std::int64_t oy = 0; oy < d.OH; ++oy) {
    for (std::int64_t ox = 0; ox < d.OW; ++ox) {
      const double* row = col + (oy * d.OW + ox) * d.K;
      for (std::int64_t c = 0; c < d.Cin; ++c) {
        double* xc = dx + c * d.H * d.W;
        for (std::int64_t ky = 0; ky < d.kh; ++ky) {
          const std::int64_t iy = oy * d.stride + ky - d.pad;
          if (iy < 0 || iy >= d.H) continue;
          const double* src = row + (c * d.kh + ky) * d.kw;
          const std::int64_t ix0 = ox * d.stride - d.pad;
          if (ix0 >= 0 && ix0 + d.kw <= d.W) {
            ops().axpy(1.0, src, xc + iy * d.W + ix0, static_cast<std::size_t>(d.kw));
          } else {
            for (std::int64_t kx = 0; kx < d.kw; ++kx) {
              const std::int64_t ix = ix0 + kx;
              if (ix >= 0 && ix < d.W) xc[iy * d.W + ix] += src[kx];
            }
          }
        }
      }
    }
  }
}

}  // namespace

TRef conv2d(TRef x, TRef w, TRef bias, int stride, int pad) {
  check_same_tape("conv2d", x, w);
  const ConvDims d = conv_dims("conv2d", x.shape(), w.shape(), stride, pad);
  const bool has_bias = bias.valid();
  if (has_bias) {
    check_same_tape("conv2d", x, bias);
    if (bias.shape() != Shape{d.Cout}) throw ShapeError("conv2d bias", bias.shape(), {d.Cout});
  }
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();

  // weights transposed once: Wt[K, Cout]
  std::vector<double> wt(static_cast<std::size_t>(d.K * d.Cout));
  for (std::int64_t co = 0; co < d.Cout; ++co)
    for (std::int64_t k = 0; k < d.K; ++k) wt[k * d.Cout + co] = wv[co * d.K + k];

  // im2col patches for the whole batch, kept for the backward pass
  auto cols = std::make_shared<DVec>(static_cast<std::size_t>(d.B * d.P * d.K));
  Tensor out = Tensor::uninit({d.B, d.Cout, d.OH, d.OW});
  std::vector<double> ytmp(static_cast<std::size_t>(d.P * d.Cout));
  for (std::int64_t b = 0; b < d.B; ++b) {
    double* col = cols->data() + b * d.P * d.K;
    im2col(d, xv.data() + b * d.Cin * d.H * d.W, col);
    std::fill(ytmp.begin(), ytmp.end(), 0.0);
    ops().gemm_nn(col, static_cast<std::size_t>(d.K), wt.data(), static_cast<std::size_t>(d.Cout),
                  ytmp.data(), static_cast<std::size_t>(d.Cout), static_cast<std::size_t>(d.P),
                  static_cast<std::size_t>(d.Cout), static_cast<std::size_t>(d.K));
    double* yb = out.data() + b * d.Cout * d.P;
    for (std::int64_t co = 0; co < d.Cout; ++co) {
      const double bv = has_bias ? bias.value()[co] : 0.0;
      for (std::int64_t p = 0; p < d.P; ++p) yb[co * d.P + p] = ytmp[p * d.Cout + co] + bv;
    }
  }

  Tape& t = *x.tape;
  const bool rg = x.requires_grad() || w.requires_grad() || (has_bias && bias.requires_grad());
  TRef out_ref = t.record("conv2d", std::move(out), rg, nullptr);
  if (rg) {
    const auto xi = x.idx, wi = w.idx, self = out_ref.idx;
    const auto bid = has_bias ? bias.idx : -1;
    t.at(self).back = [d, xi, wi, bid, self, cols](Tape& tp) {
      const Tensor& g = tp.at(self).grad;
      if (bid >= 0 && tp.at(bid).requires_grad) {
        Tensor& db = tp.grad_buf(bid);
        for (std::int64_t b = 0; b < d.B; ++b)
          for (std::int64_t co = 0; co < d.Cout; ++co)
            db[co] += ops().sum(g.data() + (b * d.Cout + co) * d.P, static_cast<std::size_t>(d.P));
      }
      const bool need_w = tp.at(wi).requires_grad;
      const bool need_x = tp.at(xi).requires_grad;
      if (!need_w && !need_x) return;
      DVec gt(static_cast<std::size_t>(d.P * d.Cout));
      std::vector<double> dwt;
      if (need_w) dwt.assign(static_cast<std::size_t>(d.K * d.Cout), 0.0);
      std::vector<double> dcol;
      if (need_x) dcol.resize(static_cast<std::size_t>(d.P * d.K));
      const Tensor& wv = tp.at(wi).value;
      for (std::int64_t b = 0; b < d.B; ++b) {
        const double* gb = g.data() + b * d.Cout * d.P;
        for (std::int64_t co = 0; co < d.Cout; ++co)
          for (std::int64_t p = 0; p < d.P; ++p) gt[p * d.Cout + co] = gb[co * d.P + p];
        const double* col = cols->data() + b * d.P * d.K;
        if (need_w)
          ops().gemm_tn(col, static_cast<std::size_t>(d.K), gt.data(),
                        static_cast<std::size_t>(d.Cout), dwt.data(),
                        static_cast<std::size_t>(d.Cout), static_cast<std::size_t>(d.K),
                        static_cast<std::size_t>(d.Cout), static_cast<std::size_t>(d.P));
        if (need_x) {
          std::fill(dcol.begin(), dcol.end(), 0.0);
          ops().gemm_nn(gt.data(), static_cast<std::size_t>(d.Cout), wv.data(),
                        static_cast<std::size_t>(d.K), dcol.data(), static_cast<std::size_t>(d.K),
                        static_cast<std::size_t>(d.P), static_cast<std::size_t>(d.K),
                        static_cast<std::size_t>(d.Cout));
          col2im_acc(d, dcol.data(), tp.grad_buf(xi).data() + b * d.Cin * d.H * d.W);
        }
      }
      if (need_w) {
        Tensor& dw = tp.grad_buf(wi);
        for (std::int64_t co = 0; co < d.Cout; ++co)
          for (std::int64_t k = 0; k < d.K; ++k) dw[co * d.K + k] += dwt[k * d.Cout + co];
      }
    };
  }
  return out_ref;
}

TRef max_pool2d(TRef x, int size, int stride) {
  const Shape& xs = x.shape();
  if (xs.size() != 4) throw ShapeError("max_pool2d", "expected [B,C,H,W], got " + shape_str(xs));
  if (size < 1 || stride < 1) throw ShapeError("max_pool2d", "invalid size/stride");
  const std::int64_t B = xs[0], C = xs[1], H = xs[2], W = xs[3];
  const std::int64_t OH = (H - size) / stride + 1, OW = (W - size) / stride + 1;
  if (OH < 1 || OW < 1) throw ShapeError("max_pool2d", "window larger than input");
  const Tensor& xv = x.value();
  Tensor out = Tensor::uninit({B, C, OH, OW});
  auto arg = std::make_shared<std::vector<std::int64_t>>(
      static_cast<std::size_t>(B * C * OH * OW));
  std::int64_t o = 0;
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const double* plane = xv.data() + bc * H * W;
    for (std::int64_t oy = 0; oy < OH; ++oy)
      for (std::int64_t ox = 0; ox < OW; ++ox, ++o) {
        double best = -1e300;
        std::int64_t besti = 0;
        for (std::int64_t ky = 0; ky < size; ++ky)
          for (std::int64_t kx = 0; kx < size; ++kx) {
            const std::int64_t i = (oy * stride + ky) * W + (ox * stride + kx);
            if (plane[i] > best) {
              best = plane[i];
              besti = i;
            }
          }
        out[o] = best;
        (*arg)[static_cast<std::size_t>(o)] = bc * H * W + besti;
      }
  }
  Tape& t = *x.tape;
  const bool rg = x.requires_grad();
  TRef out_ref = t.record("max_pool2d", std::move(out), rg, nullptr);
  if (rg) {
    const auto xi = x.idx, self = out_ref.idx;
    t.at(self).back = [xi, self, arg](Tape& tp) {
      if (!tp.at(xi).requires_grad) return;
      const Tensor& g = tp.at(self).grad;
      Tensor& dx = tp.grad_buf(xi);
      for (std::int64_t i = 0; i < g.numel(); ++i)
        dx[(*arg)[static_cast<std::size_t>(i)]] += g[i];
    };
  }
  return out_ref;
}

// ---------------------------------------------------------------------------
// shape ops

TRef reshape(TRef x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  Tape& t = *x.tape;
  const bool rg = x.requires_grad();
  TRef out_ref = t.record("reshape", std::move(out), rg, nullptr);
  if (rg) {
    const auto xi = x.idx, self = out_ref.idx;
    t.at(self).back = [xi, self](Tape& tp) {
      if (!tp.at(xi).requires_grad) return;
      const Tensor& g = tp.at(self).grad;
      ops().axpy(1.0, g.data(), tp.grad_buf(xi).data(), static_cast<std::size_t>(g.numel()));
    };
  }
  return out_ref;
}

namespace {

// walks the output of a permute in linear order yielding the input offset
template <typename F>
void permute_walk(const Shape& out_shape, const std::vector<std::int64_t>& in_stride_by_out,
                  F&& fn) {
  const std::size_t nd = out_shape.size();
  std::vector<std::int64_t> c(nd, 0);
  std::int64_t in_off = 0;
  const std::int64_t n = shape_numel(out_shape);
  for (std::int64_t o = 0; o < n; ++o) {
    fn(o, in_off);
    for (std::size_t d = nd; d-- > 0;) {
      ++c[d];
      in_off += in_stride_by_out[d];
      if (c[d] < out_shape[d]) break;
      in_off -= in_stride_by_out[d] * out_shape[d];
      c[d] = 0;
    }
  }
}

}  // namespace

TRef permute(TRef x, const std::vector<int>& perm) {
  const Shape& xs = x.shape();
  if (perm.size() != xs.size()) throw ShapeError("permute", "perm rank mismatch");
  std::vector<bool> seen(perm.size(), false);
  Shape out_shape(perm.size());
  const auto xstr = shape_strides(xs);
  std::vector<std::int64_t> stride_by_out(perm.size());
  for (std::size_t d = 0; d < perm.size(); ++d) {
    const int p = perm[d];
    if (p < 0 || p >= static_cast<int>(xs.size()) || seen[static_cast<std::size_t>(p)])
      throw ShapeError("permute", "invalid permutation");
    seen[static_cast<std::size_t>(p)] = true;
    out_shape[d] = xs[static_cast<std::size_t>(p)];
    stride_by_out[d] = xstr[static_cast<std::size_t>(p)];
  }
  const Tensor& xv = x.value();
  Tensor out = Tensor::uninit(out_shape);
  permute_walk(out_shape, stride_by_out, [&](std::int64_t o, std::int64_t i) { out[o] = xv[i]; });
  Tape& t = *x.tape;
  const bool rg = x.requires_grad();
  TRef out_ref = t.record("permute", std::move(out), rg, nullptr);
  if (rg) {
    const auto xi = x.idx, self = out_ref.idx;
    t.at(self).back = [xi, self, out_shape, stride_by_out](Tape& tp) {
      if (!tp.at(xi).requires_grad) return;
      const Tensor& g = tp.at(self).grad;
      Tensor& dx = tp.grad_buf(xi);
      permute_walk(out_shape, stride_by_out,
                   [&](std::int64_t o, std::int64_t i) { dx[i] += g[o]; });
    };
  }
  return out_ref;
}

TRef concat(const std::vector<TRef>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat", "no inputs");
  const Shape& s0 = xs[0].shape();
  const std::size_t nd = s0.size();
  if (axis < 0 || axis >= static_cast<int>(nd)) throw ShapeError("concat", "axis out of range");
  std::int64_t ax_total = 0;
  for (const TRef& x : xs) {
    const Shape& s = x.shape();
    if (s.size() != nd) throw ShapeError("concat", s0, s);
    for (std::size_t d = 0; d < nd; ++d)
      if (d != static_cast<std::size_t>(axis) && s[d] != s0[d]) throw ShapeError("concat", s0, s);
    ax_total += s[static_cast<std::size_t>(axis)];
  }
  Shape out_shape = s0;
  out_shape[static_cast<std::size_t>(axis)] = ax_total;
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= s0[static_cast<std::size_t>(d)];
  for (std::size_t d = static_cast<std::size_t>(axis) + 1; d < nd; ++d) inner *= s0[d];
  Tensor out = Tensor::uninit(out_shape);
  std::int64_t off = 0;
  std::vector<std::int64_t> blocks;
  for (const TRef& x : xs) {
    const std::int64_t blk = x.shape()[static_cast<std::size_t>(axis)] * inner;
    blocks.push_back(blk);
    for (std::int64_t ou = 0; ou < outer; ++ou)
      std::memcpy(out.data() + ou * ax_total * inner + off, x.value().data() + ou * blk,
                  sizeof(double) * static_cast<std::size_t>(blk));
    off += blk;
  }
  Tape& t = *xs[0].tape;
  bool rg = false;
  std::vector<std::int32_t> idxs;
  for (const TRef& x : xs) {
    check_same_tape("concat", xs[0], x);
    rg = rg || x.requires_grad();
    idxs.push_back(x.idx);
  }
  TRef out_ref = t.record("concat", std::move(out), rg, nullptr);
  if (rg) {
    const auto self = out_ref.idx;
    t.at(self).back = [self, idxs, blocks, outer, inner, ax_total](Tape& tp) {
      const Tensor& g = tp.at(self).grad;
      std::int64_t off = 0;
      for (std::size_t i = 0; i < idxs.size(); ++i) {
        if (tp.at(idxs[i]).requires_grad) {
          Tensor& dx = tp.grad_buf(idxs[i]);
          for (std::int64_t ou = 0; ou < outer; ++ou)
            ops().axpy(1.0, g.data() + ou * ax_total * inner + off, dx.data() + ou * blocks[i],
                       static_cast<std::size_t>(blocks[i]));
        }
        off += blocks[i];
      }
    };
  }
  return out_ref;
}

TRef slice_axis(TRef x, int axis, std::int64_t start, std::int64_t len) {
  const Shape& xs = x.shape();
  if (axis < 0 || axis >= static_cast<int>(xs.size()))
    throw ShapeError("slice_axis", "axis out of range");
  const std::int64_t ax = xs[static_cast<std::size_t>(axis)];
  if (start < 0 || len < 1 || start + len > ax) throw ShapeError("slice_axis", "range out of bounds");
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= xs[static_cast<std::size_t>(d)];
  for (std::size_t d = static_cast<std::size_t>(axis) + 1; d < xs.size(); ++d) inner *= xs[d];
  Shape out_shape = xs;
  out_shape[static_cast<std::size_t>(axis)] = len;
  Tensor out = Tensor::uninit(out_shape);
  const Tensor& xv = x.value();
  for (std::int64_t ou = 0; ou < outer; ++ou)
    std::memcpy(out.data() + ou * len * inner, xv.data() + (ou * ax + start) * inner,
                sizeof(double) * static_cast<std::size_t>(len * inner));
  Tape& t = *x.tape;
  const bool rg = x.requires_grad();
  TRef out_ref = t.record("slice_axis", std::move(out), rg, nullptr);
  if (rg) {
    const auto xi = x.idx, self = out_ref.idx;
    t.at(self).back = [xi, self, outer, inner, ax, start, len](Tape& tp) {
      if (!tp.at(xi).requires_grad) return;
      const Tensor& g = tp.at(self).grad;
      Tensor& dx = tp.grad_buf(xi);
      for (std::int64_t ou = 0; ou < outer; ++ou)
        ops().axpy(1.0, g.data() + ou * len * inner, dx.data() + (ou * ax + start) * inner,
                   static_cast<std::size_t>(len * inner));
    };
  }
  return out_ref;
}

TRef pick(TRef x, std::int64_t flat_index) {
  if (flat_index < 0 || flat_index >= x.numel())
    throw ShapeError("pick", "index out of range");
  Tape& t = *x.tape;
  const bool rg = x.requires_grad();
  TRef out_ref = t.record("pick", Tensor::scalar(x.value()[flat_index]), rg, nullptr);
  if (rg) {
    const auto xi = x.idx, self = out_ref.idx;
    t.at(self).back = [xi, self, flat_index](Tape& tp) {
      if (!tp.at(xi).requires_grad) return;
      tp.grad_buf(xi)[flat_index] += tp.at(self).grad[0];
    };
  }
  return out_ref;
}

// ---------------------------------------------------------------------------
// reductions

TRef sum_all(TRef x) {
  Tape& t = *x.tape;
  const bool rg = x.requires_grad();
  const double s = ops().sum(x.value().data(), static_cast<std::size_t>(x.numel()));
  TRef out_ref = t.record("sum", Tensor::scalar(s), rg, nullptr);
  if (rg) {
    const auto xi = x.idx, self = out_ref.idx;
    t.at(self).back = [xi, self](Tape& tp) {
      if (!tp.at(xi).requires_grad) return;
      const double g = tp.at(self).grad[0];
      Tensor& dx = tp.grad_buf(xi);
      for (std::int64_t i = 0; i < dx.numel(); ++i) dx[i] += g;
    };
  }
  return out_ref;
}

TRef mean_all(TRef x) { return scale(sum_all(x), 1.0 / static_cast<double>(x.numel())); }

namespace {

struct ReducePlan {
  Shape out_shape;
  Shape walk_shape;                       // input shape
  std::vector<std::int64_t> out_stride;   // per input dim, 0 on reduced dims
};

ReducePlan make_reduce(const char* op, const Shape& xs, std::vector<int>& axes, bool keepdim) {
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  std::vector<bool> red(xs.size(), false);
  for (int a : axes) {
    if (a < 0 || a >= static_cast<int>(xs.size())) throw ShapeError(op, "axis out of range");
    red[static_cast<std::size_t>(a)] = true;
  }
  ReducePlan p;
  p.walk_shape = xs;
  Shape kept;
  for (std::size_t d = 0; d < xs.size(); ++d) {
    if (red[d]) {
      if (keepdim) kept.push_back(1);
    } else {
      kept.push_back(xs[d]);
    }
  }
  p.out_shape = kept.empty() ? Shape{} : kept;
  // strides into the reduced output
  Shape squeezed;
  for (std::size_t d = 0; d < xs.size(); ++d)
    if (!red[d]) squeezed.push_back(xs[d]);
  const auto ostr = shape_strides(squeezed);
  p.out_stride.assign(xs.size(), 0);
  std::size_t j = 0;
  for (std::size_t d = 0; d < xs.size(); ++d)
    if (!red[d]) p.out_stride[d] = ostr[j++];
  return p;
}

template <typename F>
void reduce_walk(const ReducePlan& p, F&& fn) {
  const std::size_t nd = p.walk_shape.size();
  std::vector<std::int64_t> c(nd, 0);
  std::int64_t oo = 0;
  const std::int64_t n = shape_numel(p.walk_shape);
  for (std::int64_t i = 0; i < n; ++i) {
    fn(i, oo);
    for (std::size_t d = nd; d-- > 0;) {
      ++c[d];
      oo += p.out_stride[d];
      if (c[d] < p.walk_shape[d]) break;
      oo -= p.out_stride[d] * p.walk_shape[d];
      c[d] = 0;
    }
  }
}

}  // namespace

namespace {

// contiguous reduced block decomposition: in = [P][R][S], out = [P][S]
struct BlockReduce {
  bool ok = false;
  std::int64_t P = 1, R = 1, S = 1;
};

BlockReduce block_reduce(const Shape& xs, const std::vector<int>& sorted_axes) {
  BlockReduce b;
  if (sorted_axes.empty()) return b;
  const int lo = sorted_axes.front(), hi = sorted_axes.back();
  if (hi - lo + 1 != static_cast<int>(sorted_axes.size())) return b;
  b.ok = true;
  for (int d = 0; d < lo; ++d) b.P *= xs[static_cast<std::size_t>(d)];
  for (int d = lo; d <= hi; ++d) b.R *= xs[static_cast<std::size_t>(d)];
  for (std::size_t d = static_cast<std::size_t>(hi) + 1; d < xs.size(); ++d) b.S *= xs[d];
  return b;
}

}  // namespace

TRef sum_axes(TRef x, std::vector<int> axes, bool keepdim) {
  const ReducePlan p = make_reduce("sum_axes", x.shape(), axes, keepdim);
  const BlockReduce blk = block_reduce(x.shape(), axes);
  const Tensor& xv = x.value();
  Tensor out(p.out_shape);
  if (blk.ok) {
    if (blk.S == 1) {
      for (std::int64_t q = 0; q < blk.P; ++q)
        out[q] = ops().sum(xv.data() + q * blk.R, static_cast<std::size_t>(blk.R));
    } else {
      for (std::int64_t q = 0; q < blk.P; ++q)
        for (std::int64_t r = 0; r < blk.R; ++r)
          ops().axpy(1.0, xv.data() + (q * blk.R + r) * blk.S, out.data() + q * blk.S,
                     static_cast<std::size_t>(blk.S));
    }
  } else {
    reduce_walk(p, [&](std::int64_t i, std::int64_t oo) { out[oo] += xv[i]; });
  }
  Tape& t = *x.tape;
  const bool rg = x.requires_grad();
  TRef out_ref = t.record("sum_axes", std::move(out), rg, nullptr);
  if (rg) {
    const auto xi = x.idx, self = out_ref.idx;
    t.at(self).back = [xi, self, p, blk](Tape& tp) {
      if (!tp.at(xi).requires_grad) return;
      const Tensor& g = tp.at(self).grad;
      Tensor& dx = tp.grad_buf(xi);
      if (blk.ok) {
        if (blk.S == 1) {
          for (std::int64_t q = 0; q < blk.P; ++q) {
            const double gv = g[q];
            double* d = dx.data() + q * blk.R;
            for (std::int64_t r = 0; r < blk.R; ++r) d[r] += gv;
          }
        } else {
          for (std::int64_t q = 0; q < blk.P; ++q)
            for (std::int64_t r = 0; r < blk.R; ++r)
              ops().axpy(1.0, g.data() + q * blk.S, dx.data() + (q * blk.R + r) * blk.S,
                         static_cast<std::size_t>(blk.S));
        }
      } else {
        reduce_walk(p, [&](std::int64_t i, std::int64_t oo) { dx[i] += g[oo]; });
      }
    };
  }
  return out_ref;
}

TRef mean_axes(TRef x, std::vector<int> axes, bool keepdim) {
  const std::int64_t before = x.numel();
  TRef s = sum_axes(x, std::move(axes), keepdim);
  const std::int64_t after = s.numel();
  return scale(s, static_cast<double>(after) / static_cast<double>(before));
}

TRef reduce_max_all(TRef x) {
  const Tensor& xv = x.value();
  std::int64_t arg = 0;
  for (std::int64_t i = 1; i < xv.numel(); ++i)
    if (xv[i] > xv[arg]) arg = i;
  Tape& t = *x.tape;
  const bool rg = x.requires_grad();
  TRef out_ref = t.record("reduce_max", Tensor::scalar(xv[arg]), rg, nullptr);
  if (rg) {
    const auto xi = x.idx, self = out_ref.idx;
    t.at(self).back = [xi, self, arg](Tape& tp) {
      if (!tp.at(xi).requires_grad) return;
      tp.grad_buf(xi)[arg] += tp.at(self).grad[0];
    };
  }
  return out_ref;
}

TRef l2_norm(TRef x) {
  const double norm = std::sqrt(ops().sumsq(x.value().data(), static_cast<std::size_t>(x.numel())));
  Tape& t = *x.tape;
  const bool rg = x.requires_grad();
  TRef out_ref = t.record("l2_norm", Tensor::scalar(norm), rg, nullptr);
  if (rg) {
    const auto xi = x.idx, self = out_ref.idx;
    t.at(self).back = [xi, self, norm](Tape& tp) {
      if (!tp.at(xi).requires_grad) return;
      if (norm == 0.0) return;  // subgradient choice at the origin
      const double g = tp.at(self).grad[0];
      ops().axpy(g / norm, tp.at(xi).value.data(), tp.grad_buf(xi).data(),
                 static_cast<std::size_t>(tp.at(xi).value.numel()));
    };
  }
  return out_ref;
}

// ---------------------------------------------------------------------------
// softmax and losses

namespace {

struct AxisView {
  std::int64_t outer, len, inner;
};

AxisView axis_view(const char* op, const Shape& s, int axis) {
  if (axis < 0 || axis >= static_cast<int>(s.size())) throw ShapeError(op, "axis out of range");
  AxisView v{1, s[static_cast<std::size_t>(axis)], 1};
  for (int d = 0; d < axis; ++d) v.outer *= s[static_cast<std::size_t>(d)];
  for (std::size_t d = static_cast<std::size_t>(axis) + 1; d < s.size(); ++d) v.inner *= s[d];
  return v;
}

}  // namespace

TRef softmax(TRef x, int axis) {
  const AxisView v = axis_view("softmax", x.shape(), axis);
  const Tensor& xv = x.value();
  Tensor out = Tensor::uninit(x.shape());
  for (std::int64_t ou = 0; ou < v.outer; ++ou)
    for (std::int64_t in = 0; in < v.inner; ++in) {
      const std::int64_t base = ou * v.len * v.inner + in;
      double m = -1e300;
      for (std::int64_t i = 0; i < v.len; ++i) m = std::max(m, xv[base + i * v.inner]);
      double s = 0.0;
      for (std::int64_t i = 0; i < v.len; ++i) {
        const double e = std::exp(xv[base + i * v.inner] - m);
        out[base + i * v.inner] = e;
        s += e;
      }
      const double inv = 1.0 / s;
      for (std::int64_t i = 0; i < v.len; ++i) out[base + i * v.inner] *= inv;
    }
  Tape& t = *x.tape;
  const bool rg = x.requires_grad();
  TRef out_ref = t.record("softmax", std::move(out), rg, nullptr);
  if (rg) {
    const auto xi = x.idx, self = out_ref.idx;
    t.at(self).back = [xi, self, v](Tape& tp) {
      if (!tp.at(xi).requires_grad) return;
      const Tensor& g = tp.at(self).grad;
      const Tensor& y = tp.at(self).value;
      Tensor& dx = tp.grad_buf(xi);
      for (std::int64_t ou = 0; ou < v.outer; ++ou)
        for (std::int64_t in = 0; in < v.inner; ++in) {
          const std::int64_t base = ou * v.len * v.inner + in;
          double dot = 0.0;
          for (std::int64_t i = 0; i < v.len; ++i)
            dot += g[base + i * v.inner] * y[base + i * v.inner];
          for (std::int64_t i = 0; i < v.len; ++i)
            dx[base + i * v.inner] += (g[base + i * v.inner] - dot) * y[base + i * v.inner];
        }
    };
  }
  return out_ref;
}

TRef cross_entropy_with_logits(TRef logits, const std::vector<int>& labels) {
  const Shape& s = logits.shape();
  if (s.size() != 2) throw ShapeError("cross_entropy", "expected [B,C], got " + shape_str(s));
  const std::int64_t B = s[0], C = s[1];
  if (static_cast<std::int64_t>(labels.size()) != B)
    throw ShapeError("cross_entropy", "label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= C) throw DomainError("cross_entropy: label out of range");
  const Tensor& z = logits.value();
  auto probs = std::make_shared<Tensor>(Tensor::uninit({B, C}));
  double loss = 0.0;
  for (std::int64_t b = 0; b < B; ++b) {
    const double* row = z.data() + b * C;
    double m = row[0];
    for (std::int64_t c = 1; c < C; ++c) m = std::max(m, row[c]);
    double sum = 0.0;
    for (std::int64_t c = 0; c < C; ++c) sum += std::exp(row[c] - m);
    const double lse = m + std::log(sum);
    loss += lse - row[labels[static_cast<std::size_t>(b)]];
    for (std::int64_t c = 0; c < C; ++c)
      (*probs)[b * C + c] = std::exp(row[c] - lse);
  }
  loss /= static_cast<double>(B);
  Tape& t = *logits.tape;
  const bool rg = logits.requires_grad();
  TRef out_ref = t.record("cross_entropy", Tensor::scalar(loss), rg, nullptr);
  if (rg) {
    const auto zi = logits.idx, self = out_ref.idx;
    auto lab = std::make_shared<std::vector<int>>(labels);
    t.at(self).back = [zi, self, probs, lab, B, C](Tape& tp) {
      if (!tp.at(zi).requires_grad) return;
      const double g = tp.at(self).grad[0] / static_cast<double>(B);
      Tensor& dz = tp.grad_buf(zi);
      for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t c = 0; c < C; ++c) dz[b * C + c] += g * (*probs)[b * C + c];
        dz[b * C + (*lab)[static_cast<std::size_t>(b)]] -= g;
      }
    };
  }
  return out_ref;
}

// ---------------------------------------------------------------------------
// capsule ops

TRef squash(TRef x) {
  const Shape& s = x.shape();
  if (s.empty()) throw ShapeError("squash", "expected at least one axis");
  const std::int64_t D = s.back();
  const std::int64_t lanes = x.numel() / D;
  const Tensor& xv = x.value();
  Tensor out = Tensor::uninit(s);
  for (std::int64_t l = 0; l < lanes; ++l) {
    const double* v = xv.data() + l * D;
    const double n2 = ops().sumsq(v, static_cast<std::size_t>(D));
    const double n = std::sqrt(n2);
    const double g = n / (1.0 + n2);  // |out| = n^2/(1+n^2) < 1
    ops().scale(v, g, out.data() + l * D, static_cast<std::size_t>(D));
  }
  Tape& t = *x.tape;
  const bool rg = x.requires_grad();
  TRef out_ref = t.record("squash", std::move(out), rg, nullptr);
  if (rg) {
    const auto xi = x.idx, self = out_ref.idx;
    t.at(self).back = [xi, self, D, lanes](Tape& tp) {
      if (!tp.at(xi).requires_grad) return;
      const Tensor& g = tp.at(self).grad;
      const Tensor& xv = tp.at(xi).value;
      Tensor& dx = tp.grad_buf(xi);
      for (std::int64_t l = 0; l < lanes; ++l) {
        const double* v = xv.data() + l * D;
        const double* dv = g.data() + l * D;
        double* out = dx.data() + l * D;
        const double n2 = ops().sumsq(v, static_cast<std::size_t>(D));
        const double n = std::sqrt(n2);
        if (n == 0.0) continue;  // Jacobian vanishes at the origin
        const double gn = n / (1.0 + n2);
        const double gp = (1.0 - n2) / ((1.0 + n2) * (1.0 + n2));
        const double sdv = ops().dot(v, dv, static_cast<std::size_t>(D));
        const double coef = gp / n * sdv;
        for (std::int64_t i = 0; i < D; ++i) out[i] += gn * dv[i] + coef * v[i];
      }
    };
  }
  return out_ref;
}

TRef caps_predict(TRef u, TRef w) {
  check_same_tape("caps_predict", u, w);
  const Shape& us = u.shape();
  const Shape& ws = w.shape();
  if (us.size() != 3 || ws.size() != 4 || ws[0] != us[0] || ws[1] != us[2])
    throw ShapeError("caps_predict", us, ws);
  const std::int64_t N = us[0], B = us[1], Din = us[2], J = ws[2], Dout = ws[3];
  const Tensor& uv = u.value();
  const Tensor& wv = w.value();

  // per input capsule n, one fully contiguous GEMM: U_n[B,Din] x W_n[Din, J*Dout]
  Tensor out({N, B, J, Dout});
  for (std::int64_t n = 0; n < N; ++n)
    ops().gemm_nn(uv.data() + n * B * Din, static_cast<std::size_t>(Din),
                  wv.data() + n * Din * J * Dout, static_cast<std::size_t>(J * Dout),
                  out.data() + n * B * J * Dout, static_cast<std::size_t>(J * Dout),
                  static_cast<std::size_t>(B), static_cast<std::size_t>(J * Dout),
                  static_cast<std::size_t>(Din));

  Tape& t = *u.tape;
  const bool rg = u.requires_grad() || w.requires_grad();
  TRef out_ref = t.record("caps_predict", std::move(out), rg, nullptr);
  if (rg) {
    const auto ui = u.idx, wi = w.idx, self = out_ref.idx;
    t.at(self).back = [ui, wi, self, B, N, Din, J, Dout](Tape& tp) {
      const Tensor& g = tp.at(self).grad;
      const Tensor& wv = tp.at(wi).value;
      if (tp.at(ui).requires_grad) {
        Tensor& du = tp.grad_buf(ui);
        for (std::int64_t n = 0; n < N; ++n)
          ops().gemm_nt(g.data() + n * B * J * Dout, static_cast<std::size_t>(J * Dout),
                        wv.data() + n * Din * J * Dout, static_cast<std::size_t>(J * Dout),
                        du.data() + n * B * Din, static_cast<std::size_t>(Din),
                        static_cast<std::size_t>(B), static_cast<std::size_t>(Din),
                        static_cast<std::size_t>(J * Dout));
      }
      if (tp.at(wi).requires_grad) {
        const Tensor& uv = tp.at(ui).value;
        Tensor& dw = tp.grad_buf(wi);
        for (std::int64_t n = 0; n < N; ++n)
          ops().gemm_tn(uv.data() + n * B * Din, static_cast<std::size_t>(Din),
                        g.data() + n * B * J * Dout, static_cast<std::size_t>(J * Dout),
                        dw.data() + n * Din * J * Dout, static_cast<std::size_t>(J * Dout),
                        static_cast<std::size_t>(Din), static_cast<std::size_t>(J * Dout),
                        static_cast<std::size_t>(B));
      }
    };
  }
  return out_ref;
}

TRef caps_weighted_sum(TRef c, TRef u_hat) {
  check_same_tape("caps_weighted_sum", c, u_hat);
  const Shape& cs = c.shape();
  const Shape& us = u_hat.shape();
  if (us.size() != 4 || cs != Shape{us[0], us[1], us[2]})
    throw ShapeError("caps_weighted_sum", cs, us);
  const std::int64_t N = us[0], B = us[1], J = us[2], D = us[3];
  const Tensor& cv = c.value();
  const Tensor& uv = u_hat.value();
  Tensor out({B, J, D});
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t b = 0; b < B; ++b) {
      const double* crow = cv.data() + (n * B + b) * J;
      const double* urow = uv.data() + ((n * B + b) * J) * D;
      double* orow = out.data() + b * J * D;
      for (std::int64_t j = 0; j < J; ++j)
        ops().axpy(crow[j], urow + j * D, orow + j * D, static_cast<std::size_t>(D));
    }
  Tape& t = *c.tape;
  const bool rg = c.requires_grad() || u_hat.requires_grad();
  TRef out_ref = t.record("caps_weighted_sum", std::move(out), rg, nullptr);
  if (rg) {
    const auto ci = c.idx, ui = u_hat.idx, self = out_ref.idx;
    t.at(self).back = [ci, ui, self, B, N, J, D](Tape& tp) {
      const Tensor& g = tp.at(self).grad;  // [B,J,D]
      const bool need_c = tp.at(ci).requires_grad;
      const bool need_u = tp.at(ui).requires_grad;
      const Tensor& cv = tp.at(ci).value;
      const Tensor& uv = tp.at(ui).value;
      Tensor* dc = need_c ? &tp.grad_buf(ci) : nullptr;
      Tensor* du = need_u ? &tp.grad_buf(ui) : nullptr;
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t b = 0; b < B; ++b) {
          const double* grow = g.data() + b * J * D;
          const std::int64_t base = (n * B + b) * J;
          for (std::int64_t j = 0; j < J; ++j) {
            const double* uj = uv.data() + (base + j) * D;
            const double* gj = grow + j * D;
            if (need_c)
              (*dc)[base + j] += ops().dot(uj, gj, static_cast<std::size_t>(D));
            if (need_u)
              ops().axpy(cv[base + j], gj, du->data() + (base + j) * D,
                         static_cast<std::size_t>(D));
          }
        }
    };
  }
  return out_ref;
}

TRef caps_agreement(TRef u_hat, TRef v) {
  check_same_tape("caps_agreement", u_hat, v);
  const Shape& us = u_hat.shape();
  const Shape& vs = v.shape();
  if (us.size() != 4 || vs != Shape{us[1], us[2], us[3]})
    throw ShapeError("caps_agreement", us, vs);
  const std::int64_t N = us[0], B = us[1], J = us[2], D = us[3];
  const Tensor& uv = u_hat.value();
  const Tensor& vv = v.value();
  Tensor out = Tensor::uninit({N, B, J});
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t j = 0; j < J; ++j)
        out[(n * B + b) * J + j] =
            ops().dot(uv.data() + ((n * B + b) * J + j) * D, vv.data() + (b * J + j) * D,
                      static_cast<std::size_t>(D));
  Tape& t = *u_hat.tape;
  const bool rg = u_hat.requires_grad() || v.requires_grad();
  TRef out_ref = t.record("caps_agreement", std::move(out), rg, nullptr);
  if (rg) {
    const auto ui = u_hat.idx, vi = v.idx, self = out_ref.idx;
    t.at(self).back = [ui, vi, self, B, N, J, D](Tape& tp) {
      const Tensor& g = tp.at(self).grad;  // [N,B,J]
      const bool need_u = tp.at(ui).requires_grad;
      const bool need_v = tp.at(vi).requires_grad;
      const Tensor& uv = tp.at(ui).value;
      const Tensor& vv = tp.at(vi).value;
      Tensor* du = need_u ? &tp.grad_buf(ui) : nullptr;
      Tensor* dv = need_v ? &tp.grad_buf(vi) : nullptr;
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t b = 0; b < B; ++b)
          for (std::int64_t j = 0; j < J; ++j) {
            const double gv = g[(n * B + b) * J + j];
            if (gv == 0.0) continue;
            const std::int64_t ubase = ((n * B + b) * J + j) * D;
            const std::int64_t vbase = (b * J + j) * D;
            if (need_u)
              ops().axpy(gv, vv.data() + vbase, du->data() + ubase, static_cast<std::size_t>(D));
            if (need_v)
              ops().axpy(gv, uv.data() + ubase, dv->data() + vbase, static_cast<std::size_t>(D));
          }
    };
  }
  return out_ref;
}

Tensor softmax_rows(const Tensor& z) {
  const std::int64_t C = z.shape().back();
  const std::int64_t rows = z.numel() / C;
  Tensor out = Tensor::uninit(z.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* row = z.data() + r * C;
    double* o = out.data() + r * C;
    double m = row[0];
    for (std::int64_t c = 1; c < C; ++c) m = std::max(m, row[c]);
    double s = 0.0;
    for (std::int64_t c = 0; c < C; ++c) {
      o[c] = std::exp(row[c] - m);
      s += o[c];
    }
    for (std::int64_t c = 0; c < C; ++c) o[c] /= s;
  }
  return out;
}

}  // namespace capslab::ops
