#include "capslab/adam.hpp"

#include <cmath>

namespace capslab {

Adam::Adam(AdamConfig cfg) : cfg_(cfg) {
  if (!(cfg_.lr > 0.0)) throw DomainError("adam: learning rate must be positive");
}

void Adam::step(std::vector<Param*>& params) {
  if (m_.empty()) {
    for (const Param* p : params) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }
  if (m_.size() != params.size()) throw Error("adam: parameter list changed between steps");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = *params[i];
    if (!p.grad.same_shape(p.value))
      throw ShapeError("adam", p.value.shape(), p.grad.shape());
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    const std::int64_t n = p.value.numel();
    for (std::int64_t j = 0; j < n; ++j) {
      const double g = p.grad[j];
      if (std::isnan(g)) throw DomainError("adam: NaN gradient in parameter " + p.name);
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p.value[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

}  // namespace capslab
