#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "capslab/ops.hpp"
#include "capslab/rng.hpp"
#include "capslab/tape.hpp"

namespace capslab::testing {

inline Tensor random_tensor(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(s);
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Central-difference oracle for d(root)/d(inputs). `build` receives leaf refs
// for the inputs (in order) and returns a scalar root; it must be a pure
// function of the leaf values so it can be re-evaluated at shifted points.
// Returns the worst relative error over all input elements, with relative
// error defined as |analytic - fd| / max(1, |analytic|, |fd|).
inline double grad_check(
    const std::function<TRef(Tape&, std::vector<TRef>&)>& build,
    std::vector<Tensor> inputs, double step = 1e-6) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<TRef> leaves;
    for (const Tensor& in : inputs) leaves.push_back(tape.leaf(in, true));
    TRef root = build(tape, leaves);
    tape.backward(root);
    for (const TRef& l : leaves) analytic.push_back(l.grad());
  }
  auto eval = [&](const std::vector<Tensor>& ins) {
    Tape tape;
    std::vector<TRef> leaves;
    for (const Tensor& in : ins) leaves.push_back(tape.leaf(in, false));
    return build(tape, leaves).value().item();
  };
  double worst = 0.0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    for (std::int64_t i = 0; i < inputs[t].numel(); ++i) {
      const double orig = inputs[t][i];
      inputs[t][i] = orig + step;
      const double fp = eval(inputs);
      inputs[t][i] = orig - step;
      const double fm = eval(inputs);
      inputs[t][i] = orig;
      const double fd = (fp - fm) / (2.0 * step);
      const double a = analytic[t][i];
      const double rel = std::fabs(a - fd) / std::max({1.0, std::fabs(a), std::fabs(fd)});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

// weighted-sum root so every output element of an op influences the scalar;
// weights are a pure function of the seed so repeated builds see the same map
inline TRef weighted_sum(Tape& tape, TRef y, std::uint64_t seed) {
  Rng rng(seed);
  Tensor w(y.shape());
  for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(0.5, 1.5);
  return ops::sum_all(ops::mul(y, tape.constant(std::move(w))));
}

}  // namespace capslab::testing
