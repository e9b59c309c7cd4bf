#pragma once

#include "capslab/tape.hpp"

// Differentiable op catalog. All ops validate shapes up front and raise
// ShapeError/DomainError with the op name; backward closures accumulate
// exact analytic partials into operand grads.
namespace capslab::ops {

// elementwise binary with numpy-style broadcasting
TRef add(TRef a, TRef b);
TRef sub(TRef a, TRef b);
TRef mul(TRef a, TRef b);

// affine scalars
TRef scale(TRef x, double c);       // c * x
TRef add_scalar(TRef x, double c);  // x + c
inline TRef neg(TRef x) { return scale(x, -1.0); }

// unary elementwise
TRef relu(TRef x);
TRef tanh(TRef x);
TRef arctanh(TRef x);  // DomainError outside (-1, 1)
TRef sigmoid(TRef x);
TRef sqrt(TRef x);  // DomainError below 0; derivative at 0 defined as 0
TRef square(TRef x);
TRef reciprocal(TRef x);
TRef sign(TRef x);                      // zero gradient by convention
TRef clamp(TRef x, double lo, double hi);  // grad passes strictly inside (lo, hi)

// linear algebra
TRef matmul(TRef a, TRef b);  // [m,k] x [k,n]
TRef conv2d(TRef x, TRef w, TRef bias, int stride = 1, int pad = 0);  // bias optional: pass {} TRef
TRef max_pool2d(TRef x, int size = 2, int stride = 2);

// shape manipulation
TRef reshape(TRef x, Shape shape);
TRef permute(TRef x, const std::vector<int>& perm);
TRef concat(const std::vector<TRef>& xs, int axis);
TRef slice_axis(TRef x, int axis, std::int64_t start, std::int64_t len);
TRef pick(TRef x, std::int64_t flat_index);  // scalar x[i]

// reductions
TRef sum_all(TRef x);
TRef mean_all(TRef x);
TRef sum_axes(TRef x, std::vector<int> axes, bool keepdim);
TRef mean_axes(TRef x, std::vector<int> axes, bool keepdim);
TRef reduce_max_all(TRef x);  // gradient to the first argmax
TRef l2_norm(TRef x);         // gradient at 0 defined as 0

// softmax over one axis; rows are exact probability simplexes
TRef softmax(TRef x, int axis);

// fused classification loss: mean over batch of -log softmax(z)[label]
TRef cross_entropy_with_logits(TRef logits, const std::vector<int>& labels);

// capsule ops
TRef squash(TRef x);  // vector nonlinearity over the trailing axis
// u[N,B,Din] x W[N,Din,J,Dout] -> estimates [N,B,J,Dout]. Capsule-major
// layout keeps every per-capsule GEMM panel contiguous.
TRef caps_predict(TRef u, TRef w);
// s[B,J,D] = sum_n c[N,B,J] * u_hat[N,B,J,D] (routing weighted sum)
TRef caps_weighted_sum(TRef c, TRef u_hat);
// a[N,B,J] = <u_hat[N,B,J,:], v[B,J,:]> (routing agreement)
TRef caps_agreement(TRef u_hat, TRef v);

// non-differentiating helpers shared with attack code
Tensor softmax_rows(const Tensor& z);  // softmax over trailing axis, detached

}  // namespace capslab::ops
