#include <chrono>
#include <cmath>

#include "capslab/attacks.hpp"
#include "capslab/kernels.hpp"
#include "capslab/ops.hpp"

namespace capslab {
namespace O = ops;

Tensor fgsm_step(const Classifier& model, const Tensor& x_batch, const std::vector<int>& labels,
                 double eps) {
  if (eps < 0.0) throw DomainError("fgsm_step: epsilon must be nonnegative");
  Tape t;
  TRef xn = t.leaf(as_batch(x_batch), true);
  TRef loss = model.loss_graph(t, xn, labels);
  t.backward(loss);
  const Tensor& g = xn.grad();
  Tensor delta = Tensor::uninit(g.shape());
  for (std::int64_t i = 0; i < g.numel(); ++i)
    delta[i] = g[i] > 0.0 ? eps : (g[i] < 0.0 ? -eps : 0.0);
  return delta;
}

UniversalResult universal_perturbation(const Classifier& model, const LabeledDataset& fold,
                                       const UniversalConfig& cfg, Rng& rng) {
  if (fold.size() == 0) throw Error("universal_perturbation: empty fold");
  const std::int64_t hw = fold.height * fold.width;
  UniversalResult out;
  out.delta = Tensor({fold.height, fold.width});

  auto fold_accuracy = [&] { return model.accuracy(fold, &out.delta); };

  double acc = fold_accuracy();
  out.accuracy_trace.push_back(acc);
  bool delta_dirty = false;  // delta changed since the last accuracy reading
  int outer = 0;
  for (; outer < cfg.max_outer_iterations && acc >= cfg.accuracy_threshold; ++outer) {
    // batch of images the model still gets right under the current delta
    std::vector<std::size_t> order(fold.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<std::size_t> picked;
    for (std::size_t at = 0; at < order.size() && picked.size() < static_cast<std::size_t>(cfg.batch_size);
         at += 64) {
      const std::size_t chunk = std::min<std::size_t>(64, order.size() - at);
      Tensor batch = Tensor::uninit({static_cast<std::int64_t>(chunk), 1, fold.height, fold.width});
      for (std::size_t i = 0; i < chunk; ++i) {
        const Tensor& img = fold.images[order[at + i]];
        double* dst = batch.data() + static_cast<std::int64_t>(i) * hw;
        for (std::int64_t j = 0; j < hw; ++j)
          dst[j] = std::min(1.0, std::max(0.0, img[j] + out.delta[j]));
      }
      const auto pred = model.predict(batch);
      for (std::size_t i = 0; i < chunk && picked.size() < static_cast<std::size_t>(cfg.batch_size); ++i)
        if (pred[i] == fold.labels[order[at + i]]) picked.push_back(order[at + i]);
    }
    if (picked.empty()) break;  // nothing left to fix: accuracy is already broken

    Tensor batch = Tensor::uninit(
        {static_cast<std::int64_t>(picked.size()), 1, fold.height, fold.width});
    std::vector<int> labels(picked.size());
    for (std::size_t i = 0; i < picked.size(); ++i) {
      const Tensor& img = fold.images[picked[i]];
      double* dst = batch.data() + static_cast<std::int64_t>(i) * hw;
      for (std::int64_t j = 0; j < hw; ++j)
        dst[j] = std::min(1.0, std::max(0.0, img[j] + out.delta[j]));
      labels[i] = fold.labels[picked[i]];
    }
    const Tensor deltas = fgsm_step(model, batch, labels, cfg.epsilon);
    const double inv = 1.0 / static_cast<double>(picked.size());
    for (std::size_t i = 0; i < picked.size(); ++i)
      kern::ops().axpy(inv, deltas.data() + static_cast<std::int64_t>(i) * hw, out.delta.data(),
                       static_cast<std::size_t>(hw));
    delta_dirty = true;

    if ((outer + 1) % cfg.eval_every == 0) {
      acc = fold_accuracy();
      out.accuracy_trace.push_back(acc);
      delta_dirty = false;
    }
  }
  // make sure the reported accuracy reflects the final delta
  if (delta_dirty) {
    acc = fold_accuracy();
    out.accuracy_trace.push_back(acc);
  }
  out.success = acc < cfg.accuracy_threshold;
  out.outer_iterations = outer;
  out.norm = std::sqrt(
      kern::ops().sumsq(out.delta.data(), static_cast<std::size_t>(out.delta.numel())));
  return out;
}

}  // namespace capslab
