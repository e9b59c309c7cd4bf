#include <chrono>
#include <cmath>
#include <limits>

#include "capslab/attacks.hpp"
#include "capslab/kernels.hpp"
#include "capslab/ops.hpp"

namespace capslab {
namespace O = ops;

AttackResult deepfool_attack(const Classifier& model, const Tensor& x, int true_label,
                             const DeepFoolConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const int classes = model.num_classes();
  const std::int64_t n = x.numel();
  const Shape img = x.shape();
  const Shape batch_shape{1, 1, img[img.size() - 2], img[img.size() - 1]};

  AttackResult res;
  res.sample_index = 0;
  res.original = x;
  res.true_label = true_label;
  res.delta = Tensor(x.shape());

  // the walk lives on the clipped image so every step is a feasible move;
  // clipping afterwards would silently undo boundary crossings on saturated
  // pixels
  const Tensor x_flat = x.reshaped({n});
  Tensor x_cur = x_flat;
  bool flipped = false;
  int iters = 0;
  for (; iters < cfg.max_iterations; ++iters) {
    // one tape, one forward; one backward sweep per class gradient
    Tape t;
    TRef xn = t.leaf(x_cur.reshaped(batch_shape), true);
    TRef z = O::reshape(model.logits_graph(t, xn), {static_cast<std::int64_t>(classes)});
    const Tensor zv = z.value();
    int cur = 0;
    for (int i = 1; i < classes; ++i)
      if (zv[i] > zv[cur]) cur = i;
    if (cur != true_label) {
      flipped = true;
      break;
    }

    std::vector<Tensor> grads(static_cast<std::size_t>(classes));
    for (int i = 0; i < classes; ++i) {
      t.clear_grads();
      t.backward(O::pick(z, i));
      grads[static_cast<std::size_t>(i)] = xn.grad().reshaped({n});
    }

    // nearest linearized boundary
    int best = -1;
    double best_ratio = std::numeric_limits<double>::infinity();
    double best_wnorm2 = 0.0;
    Tensor w_best;
    for (int i = 0; i < classes; ++i) {
      if (i == cur) continue;
      Tensor w = Tensor::uninit({n});
      kern::ops().sub(grads[static_cast<std::size_t>(i)].data(),
                      grads[static_cast<std::size_t>(cur)].data(), w.data(),
                      static_cast<std::size_t>(n));
      const double wnorm2 = kern::ops().sumsq(w.data(), static_cast<std::size_t>(n));
      if (wnorm2 < 1e-24) continue;
      const double f = zv[i] - zv[cur];
      const double ratio = std::fabs(f) / std::sqrt(wnorm2);
      if (ratio < best_ratio) {
        best_ratio = ratio;
        best = i;
        best_wnorm2 = wnorm2;
        w_best = std::move(w);
      }
    }
    if (best < 0) {
      // all difference gradients vanished: flat logits, nothing to follow
      res.success = false;
      res.predicted_label = cur;
      res.iterations = iters;
      res.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      return res;
    }

    const double f_l = std::fabs(zv[best] - zv[cur]);
    double step_scale = f_l / best_wnorm2;
    const double step_norm = step_scale * std::sqrt(best_wnorm2);
    if (step_norm > cfg.step_norm_cap) step_scale *= cfg.step_norm_cap / step_norm;
    for (std::int64_t i = 0; i < n; ++i)
      x_cur[i] = std::min(1.0, std::max(0.0, x_cur[i] + step_scale * w_best[i]));
  }

  Tensor delta = Tensor::uninit({n});
  kern::ops().sub(x_cur.data(), x_flat.data(), delta.data(), static_cast<std::size_t>(n));
  if (flipped && cfg.overshoot != 1.0)
    kern::ops().scale(delta.data(), cfg.overshoot, delta.data(), static_cast<std::size_t>(n));

  // overshoot can leave the box; the final clip defines the reported delta
  const Tensor x_adv = clip01_add(x_flat, delta);
  Tensor final_delta = Tensor::uninit({n});
  kern::ops().sub(x_adv.data(), x_flat.data(), final_delta.data(), static_cast<std::size_t>(n));
  res.delta = final_delta.reshaped(x.shape());
  res.norm = std::sqrt(kern::ops().sumsq(res.delta.data(), static_cast<std::size_t>(n)));
  res.predicted_label = model.predict_one(x_adv.reshaped(x.shape()));
  res.success = res.predicted_label != true_label;
  res.iterations = iters;
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace capslab
