#include "capslab/attacks.hpp"

namespace capslab {

TransferStats transfer_evaluate(const std::vector<AttackResult>& results,
                                const Classifier& target, bool targeted) {
  TransferStats stats;
  std::size_t fooled = 0;
  for (const AttackResult& r : results) {
    if (!r.success) continue;
    if (r.original.shape() != Shape{target.input_shape()[1], target.input_shape()[2]})
      throw ShapeError("transfer_evaluate", r.original.shape(), target.input_shape());
    ++stats.evaluated;
    const int pred = target.predict_one(clip01_add(r.original, r.delta));
    const bool hit = targeted ? pred == r.target_label : pred != r.true_label;
    if (hit) ++fooled;
  }
  if (stats.evaluated > 0)
    stats.fooling_rate = static_cast<double>(fooled) / static_cast<double>(stats.evaluated);
  return stats;
}

double universal_transfer_accuracy(const Tensor& delta, const Classifier& target,
                                   const LabeledDataset& test) {
  return target.accuracy(test, &delta);
}

}  // namespace capslab
