#include "capslab/layers.hpp"

#include "capslab/kernels.hpp"

namespace capslab {
namespace O = ops;

namespace {

Tensor trunc_normal(const Shape& s, double stddev, Rng& rng) {
  Tensor t(s);
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.truncated_normal(stddev);
  return t;
}

constexpr double kInitStd = 0.05;

}  // namespace

void ParamBinding::fold() const {
  for (const auto& [p, leaf] : bound) {
    const Tensor& g = leaf.grad();
    if (g.empty()) continue;
    kern::ops().axpy(1.0, g.data(), p->grad.data(), static_cast<std::size_t>(g.numel()));
  }
}

TRef param_leaf(Tape& t, const Param& p, ParamBinding* pb) {
  if (pb) return pb->bind(t, const_cast<Param&>(p));
  return t.leaf(p.value, false);
}

Conv2dLayer::Conv2dLayer(const std::string& name, int cin, int cout, int k, int stride_, Rng& rng)
    : w(name + ".w", trunc_normal({cout, cin, k, k}, kInitStd, rng)),
      b(name + ".b", Tensor({cout})),
      stride(stride_) {}

TRef Conv2dLayer::forward(Tape& t, TRef x, ParamBinding* pb) const {
  return O::conv2d(x, param_leaf(t, w, pb), param_leaf(t, b, pb), stride, pad);
}

DenseLayer::DenseLayer(const std::string& name, int in, int out, Rng& rng)
    : w(name + ".w", trunc_normal({in, out}, kInitStd, rng)), b(name + ".b", Tensor({out})) {}

TRef DenseLayer::forward(Tape& t, TRef x, ParamBinding* pb) const {
  return O::add(O::matmul(x, param_leaf(t, w, pb)), param_leaf(t, b, pb));
}

BatchNorm2d::BatchNorm2d(const std::string& name, int channels)
    : gamma(name + ".gamma", Tensor({channels}, 1.0)),
      beta(name + ".beta", Tensor({channels})),
      run_mean({channels}),
      run_var(Tensor({channels}, 1.0)) {}

TRef BatchNorm2d::forward(Tape& t, TRef x, bool training, ParamBinding* pb) {
  const std::int64_t C = x.shape()[1];
  TRef g = O::reshape(param_leaf(t, gamma, pb), {1, C, 1, 1});
  TRef b = O::reshape(param_leaf(t, beta, pb), {1, C, 1, 1});
  if (training) {
    TRef m = O::mean_axes(x, {0, 2, 3}, true);  // [1,C,1,1]
    TRef xc = O::sub(x, m);
    TRef var = O::mean_axes(O::square(xc), {0, 2, 3}, true);
    TRef inv = O::reciprocal(O::sqrt(O::add_scalar(var, eps)));
    for (std::int64_t c = 0; c < C; ++c) {
      run_mean[c] = (1.0 - momentum) * run_mean[c] + momentum * m.value()[c];
      run_var[c] = (1.0 - momentum) * run_var[c] + momentum * var.value()[c];
    }
    return O::add(O::mul(O::mul(xc, inv), g), b);
  }
  Tensor rm = run_mean.reshaped({1, C, 1, 1});
  Tensor rv(Shape{1, C, 1, 1});
  for (std::int64_t c = 0; c < C; ++c) rv[c] = 1.0 / std::sqrt(run_var[c] + eps);
  TRef xc = O::sub(x, t.constant(std::move(rm)));
  return O::add(O::mul(O::mul(xc, t.constant(std::move(rv))), g), b);
}

TRef dropout(Tape& t, TRef x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw DomainError("dropout: rate must be below 1");
  const double keep = 1.0 - rate;
  Tensor mask(x.shape());
  for (std::int64_t i = 0; i < mask.numel(); ++i)
    mask[i] = rng.uniform() < keep ? 1.0 / keep : 0.0;
  return O::mul(x, t.constant(std::move(mask)));
}

}  // namespace capslab
