#pragma once

#include <optional>
#include <vector>

#include "capslab/classifier.hpp"
#include "capslab/dataset.hpp"
#include "capslab/rng.hpp"

namespace capslab {

// Per-sample attack record. x+delta always lies in the unit box; norm is the
// l2 norm of delta. Success is targeted (prediction == target) for CW and
// untargeted (prediction != true label) otherwise. wall_seconds is measured
// but never serialized, so result files are bit-reproducible.
struct AttackResult {
  std::size_t sample_index = 0;
  Tensor original;  // [H,W]
  Tensor delta;     // [H,W]
  double norm = 0.0;
  bool success = false;
  int true_label = -1;
  int predicted_label = -1;
  int target_label = -1;  // -1 for untargeted attacks
  int iterations = 0;
  double wall_seconds = 0.0;
};

struct CwConfig {
  double kappa = 1.0;  // confidence margin (paper experiments use 1)
  int search_steps = 9;
  double initial_c = 1e-2;
  double max_c = 1e10;  // doubling phase gives up past this
  int adam_steps = 1000;
  double adam_lr = 5e-3;
};

struct BoundaryConfig {
  double gamma = 1e-2;  // orthogonal step size relative to d(x, x_adv)
  double nu = 1e-2;     // source step size relative to d(x, x_adv)
  int max_steps = 5000;
  int init_rejection_cap = 1000;
  int adapt_window = 30;
  double adapt_up = 1.5;
  double adapt_down = 0.67;
  double convergence_eps = 1e-7;  // stop when both relative steps collapse
};

struct DeepFoolConfig {
  int max_iterations = 100;
  double step_norm_cap = 0.2;
  double overshoot = 1.02;
};

struct UniversalConfig {
  double accuracy_threshold = 0.5;  // stop once fold accuracy drops below
  double epsilon = 0.02;            // FGSM step
  int batch_size = 64;
  int max_outer_iterations = 500;
  int eval_every = 1;  // fold accuracy re-evaluation cadence
};

// Targeted white-box attack: minimize ||delta||_2 + c * max(G - Z_t, -kappa)
// over the tanh reparameterization, Adam inner loop, c found by doubling
// until the first success then bisecting. Returns the smallest-norm success.
AttackResult cw_attack(const Classifier& model, const Tensor& x, int true_label, int target,
                       const CwConfig& cfg);

// Untargeted decision-only attack: random walk along the decision boundary
// with dynamically adapted orthogonal/source steps. distance_trace, when
// given, records d(x, x_adv) after every accepted step.
AttackResult boundary_attack(const Classifier& model, const Tensor& x, int true_label,
                             const BoundaryConfig& cfg, Rng& rng,
                             std::vector<double>* distance_trace = nullptr);

// Untargeted white-box attack: iterative projection onto the nearest
// linearized decision boundary, per-step norm cap, final overshoot, box clip.
AttackResult deepfool_attack(const Classifier& model, const Tensor& x, int true_label,
                             const DeepFoolConfig& cfg);

// One-step sign-of-gradient perturbation of the model's training loss.
// Returns per-image deltas shaped like x_batch; every component is in
// {-eps, 0, +eps}.
Tensor fgsm_step(const Classifier& model, const Tensor& x_batch, const std::vector<int>& labels,
                 double eps);

struct UniversalResult {
  Tensor delta;  // [H,W]
  std::vector<double> accuracy_trace;
  bool success = false;
  int outer_iterations = 0;
  double norm = 0.0;
};

// Accumulates averaged FGSM perturbations of still-correctly-classified
// batches until fold accuracy under clip(x+delta) falls below the threshold.
UniversalResult universal_perturbation(const Classifier& model, const LabeledDataset& fold,
                                       const UniversalConfig& cfg, Rng& rng);

struct TransferStats {
  double fooling_rate = 0.0;
  std::size_t evaluated = 0;  // number of successful source results used
};

// Applies stored perturbations (successful source results only) to another
// model; targeted fooling means hitting the stored target label.
TransferStats transfer_evaluate(const std::vector<AttackResult>& results,
                                const Classifier& target, bool targeted);

// whole-test-set accuracy of a model under one fixed universal perturbation
double universal_transfer_accuracy(const Tensor& delta, const Classifier& target,
                                   const LabeledDataset& test);

}  // namespace capslab
