#include <chrono>
#include <cmath>
#include <limits>

#include "capslab/attacks.hpp"
#include "capslab/kernels.hpp"
#include "capslab/ops.hpp"

namespace capslab {
namespace O = ops;

namespace {

struct CwInner {
  bool success = false;
  double norm = std::numeric_limits<double>::infinity();
  Tensor delta;       // at the best recorded iterate
  double margin = -std::numeric_limits<double>::infinity();
  Tensor best_any_delta;  // smallest-loss iterate even without success
};

// one Adam run at fixed c; tracks the best (smallest-norm) iterate whose
// logit margin clears kappa
CwInner cw_inner(const Classifier& model, const Tensor& x_flat, const Shape& img_shape,
                 int target, double c, const CwConfig& cfg) {
  const std::int64_t n = x_flat.numel();
  const int classes = model.num_classes();

  // start at delta = 0: w = arctanh(2x - 1) with x nudged off the box corners
  Param w("cw.w", Tensor::uninit(x_flat.shape()));
  constexpr double kEdge = 1e-6;
  for (std::int64_t i = 0; i < n; ++i) {
    const double xv = std::min(1.0 - kEdge, std::max(kEdge, x_flat[i]));
    w.value[i] = std::atanh(2.0 * xv - 1.0);
  }
  AdamConfig acfg;
  acfg.lr = cfg.adam_lr;
  Adam opt(acfg);
  std::vector<Param*> params{&w};

  Tensor mask({static_cast<std::int64_t>(classes)});
  mask[target] = -1e9;  // knocks the target out of the max

  CwInner out;
  double best_gap = std::numeric_limits<double>::infinity();
  for (int step = 0; step < cfg.adam_steps; ++step) {
    Tape t;
    TRef wn = t.leaf(w.value, true);
    TRef x_adv = O::add_scalar(O::scale(O::tanh(wn), 0.5), 0.5);  // in (0,1) by construction
    TRef delta = O::sub(x_adv, t.constant(x_flat));
    TRef z = O::reshape(model.logits_graph(t, O::reshape(x_adv, img_shape)),
                        {static_cast<std::int64_t>(classes)});
    TRef z_t = O::pick(z, target);
    TRef others_max = O::reduce_max_all(O::add(z, t.constant(mask)));
    TRef hinge = O::clamp(O::sub(others_max, z_t), -cfg.kappa,
                          std::numeric_limits<double>::infinity());
    TRef loss = O::add(O::l2_norm(delta), O::scale(hinge, c));

    const double margin = z_t.value().item() - others_max.value().item();
    const double norm = std::sqrt(
        kern::ops().sumsq(delta.value().data(), static_cast<std::size_t>(n)));
    if (margin >= cfg.kappa && norm < out.norm) {
      out.success = true;
      out.norm = norm;
      out.delta = delta.value();
      out.margin = margin;
    }
    const double gap = cfg.kappa - margin;
    if (gap < best_gap) {
      best_gap = gap;
      out.best_any_delta = delta.value();
      if (!out.success) out.margin = margin;
    }

    t.backward(loss);
    w.zero_grad();
    kern::ops().axpy(1.0, wn.grad().data(), w.grad.data(), static_cast<std::size_t>(n));
    opt.step(params);
  }
  return out;
}

}  // namespace

AttackResult cw_attack(const Classifier& model, const Tensor& x, int true_label, int target,
                       const CwConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  if (target == true_label) throw Error("cw_attack: target equals the true label");
  const Shape img = x.shape();
  const Shape batch_shape{1, 1, img[img.size() - 2], img[img.size() - 1]};
  Tensor x_flat = x.reshaped({x.numel()});

  AttackResult res;
  res.original = x;
  res.true_label = true_label;
  res.target_label = target;
  res.delta = Tensor(x.shape());
  res.norm = 0.0;

  // doubling phase: find the first adversarial c
  double c = cfg.initial_c;
  double c_lo = 0.0, c_hi = 0.0;
  CwInner best;
  int runs = 0;
  for (;; c *= 2.0) {
    CwInner r = cw_inner(model, x_flat, batch_shape, target, c, cfg);
    ++runs;
    if (r.success) {
      if (r.norm < best.norm) best = r;
      c_hi = c;
      c_lo = c / 2.0;
      break;
    }
    if (!best.success && r.margin > best.margin) {
      best.margin = r.margin;
      best.best_any_delta = r.best_any_delta;
    }
    if (c > cfg.max_c) break;
  }

  if (c_hi > 0.0) {
    // bisection phase: shrink toward the smallest adversarial c
    for (int round = 0; round < cfg.search_steps; ++round) {
      const double mid = 0.5 * (c_lo + c_hi);
      CwInner r = cw_inner(model, x_flat, batch_shape, target, mid, cfg);
      ++runs;
      if (r.success) {
        c_hi = mid;
        if (r.norm < best.norm) best = r;
      } else {
        c_lo = mid;
      }
    }
  }

  res.iterations = runs * cfg.adam_steps;
  if (best.success) {
    res.success = true;
    res.delta = best.delta.reshaped(x.shape());
    res.norm = best.norm;
  } else if (!best.best_any_delta.empty()) {
    res.delta = best.best_any_delta.reshaped(x.shape());
    res.norm = std::sqrt(kern::ops().sumsq(res.delta.data(),
                                           static_cast<std::size_t>(res.delta.numel())));
  }
  res.predicted_label = model.predict_one(clip01_add(x, res.delta));
  if (res.success && res.predicted_label != target) {
    // paranoia: success was recorded from the margin at the stored iterate
    res.success = false;
  }
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace capslab
