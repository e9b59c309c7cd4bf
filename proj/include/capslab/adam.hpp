#pragma once

#include <string>
#include <vector>

#include "capslab/tensor.hpp"

namespace capslab {

// Named trainable tensor with a persistent gradient accumulator. Parameters
// live outside any tape; training copies values onto a tape and folds leaf
// grads back here.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  Param() = default;
  Param(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
    grad = Tensor(value.shape());
  }
  void zero_grad() { std::fill(grad.values().begin(), grad.values().end(), 0.0); }
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moment buffers are lazily shaped to the
// parameter list on the first step; the step counter is strictly increasing.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {});

  // applies one update from param.grad; grads are left untouched
  void step(std::vector<Param*>& params);

  std::int64_t steps_taken() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace capslab
