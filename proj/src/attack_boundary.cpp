#include <chrono>
#include <cmath>

#include "capslab/attacks.hpp"
#include "capslab/kernels.hpp"

namespace capslab {
namespace {

double dist(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

Tensor clip01(Tensor t) {
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = std::min(1.0, std::max(0.0, t[i]));
  return t;
}

// acceptance-rate window driving the trust-region-style step adaptation
struct AdaptWindow {
  int attempts = 0;
  int accepts = 0;
  void record(bool ok) {
    ++attempts;
    if (ok) ++accepts;
  }
  // returns a scale factor once the window is full, 1.0 otherwise
  double poll(const BoundaryConfig& cfg) {
    if (attempts < cfg.adapt_window) return 1.0;
    const double rate = static_cast<double>(accepts) / attempts;
    attempts = accepts = 0;
    if (rate > 0.5) return cfg.adapt_up;
    if (rate < 0.2) return cfg.adapt_down;
    return 1.0;
  }
};

}  // namespace

AttackResult boundary_attack(const Classifier& model, const Tensor& x, int true_label,
                             const BoundaryConfig& cfg, Rng& rng,
                             std::vector<double>* distance_trace) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::int64_t n = x.numel();

  AttackResult res;
  res.original = x;
  res.true_label = true_label;
  res.delta = Tensor(x.shape());

  auto misclassified = [&](const Tensor& img) { return model.predict_one(img) != true_label; };

  // trivially done when the model is already wrong on x
  if (misclassified(x)) {
    res.success = true;
    res.predicted_label = model.predict_one(x);
    res.norm = 0.0;
    res.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
  }

  // initial perturbation componentwise from U(0,1), rejection-sampled
  Tensor x_adv;
  bool found = false;
  for (int tries = 0; tries < cfg.init_rejection_cap; ++tries) {
    Tensor cand = Tensor::uninit(x.shape());
    for (std::int64_t i = 0; i < n; ++i) cand[i] = std::min(1.0, x[i] + rng.uniform());
    if (misclassified(cand)) {
      x_adv = std::move(cand);
      found = true;
      break;
    }
  }
  if (!found) {
    res.success = false;  // degenerate classifier: nothing misclassifies
    res.predicted_label = true_label;
    res.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
  }

  double gamma = cfg.gamma, nu = cfg.nu;
  double d = dist(x, x_adv);
  if (distance_trace) distance_trace->push_back(d);
  AdaptWindow orth_win, src_win;
  int step = 0;
  for (; step < cfg.max_steps; ++step) {
    if (d == 0.0) break;
    // orthogonal candidate: random direction projected off the source
    // direction, scaled to gamma*d, then re-projected onto the sphere of
    // radius d around x
    {
      Tensor eta = Tensor::uninit(x.shape());
      for (std::int64_t i = 0; i < n; ++i) eta[i] = rng.normal();
      Tensor dir = Tensor::uninit(x.shape());
      kern::ops().sub(x_adv.data(), x.data(), dir.data(), static_cast<std::size_t>(n));
      const double proj = kern::ops().dot(eta.data(), dir.data(), static_cast<std::size_t>(n)) /
                          (d * d);
      kern::ops().axpy(-proj, dir.data(), eta.data(), static_cast<std::size_t>(n));
      const double enorm =
          std::sqrt(kern::ops().sumsq(eta.data(), static_cast<std::size_t>(n)));
      if (enorm > 0.0) {
        kern::ops().scale(eta.data(), gamma * d / enorm, eta.data(),
                          static_cast<std::size_t>(n));
        Tensor cand = Tensor::uninit(x.shape());
        kern::ops().add(x_adv.data(), eta.data(), cand.data(), static_cast<std::size_t>(n));
        // back to the sphere: keeps condition 2's step/distance ratio honest
        Tensor rad = Tensor::uninit(x.shape());
        kern::ops().sub(cand.data(), x.data(), rad.data(), static_cast<std::size_t>(n));
        const double rnorm =
            std::sqrt(kern::ops().sumsq(rad.data(), static_cast<std::size_t>(n)));
        for (std::int64_t i = 0; i < n; ++i) cand[i] = x[i] + rad[i] * (d / rnorm);
        cand = clip01(std::move(cand));
        const bool ok = misclassified(cand);
        orth_win.record(ok);
        if (ok) {
          x_adv = std::move(cand);
          const double nd = dist(x, x_adv);  // clipping can only shrink it
          d = nd;
          if (distance_trace) distance_trace->push_back(d);
        }
      }
      gamma *= orth_win.poll(cfg);
    }
    // source candidate: contract toward x by factor (1 - nu)
    {
      Tensor cand = Tensor::uninit(x.shape());
      for (std::int64_t i = 0; i < n; ++i) cand[i] = x[i] + (1.0 - nu) * (x_adv[i] - x[i]);
      cand = clip01(std::move(cand));
      const bool ok = misclassified(cand);
      src_win.record(ok);
      if (ok) {
        x_adv = std::move(cand);
        d = dist(x, x_adv);
        if (distance_trace) distance_trace->push_back(d);
      }
      nu *= src_win.poll(cfg);
    }
    if (gamma * d < cfg.convergence_eps && nu * d < cfg.convergence_eps) break;
  }

  kern::ops().sub(x_adv.data(), x.data(), res.delta.data(), static_cast<std::size_t>(n));
  res.norm = d;
  res.predicted_label = model.predict_one(x_adv);
  res.success = res.predicted_label != true_label;
  res.iterations = step;
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace capslab
