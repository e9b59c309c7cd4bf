#pragma once

#include <memory>
#include <string>
#include <vector>

#include "capslab/adam.hpp"
#include "capslab/dataset.hpp"
#include "capslab/tape.hpp"

namespace capslab {

// Common contract the attacks consume: logits Z(x), probabilities F(x),
// predicted label C(x) = argmax F(x), and gradient access through
// logits_graph / loss_graph. For the ConvNet F = softmax(Z); for the CapsNet
// F_i is the class-capsule length and Z = arctanh(2F - 1), so argmax Z always
// equals argmax F.
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual std::string kind() const = 0;
  virtual int num_classes() const = 0;
  virtual Shape input_shape() const = 0;  // {1, H, W}

  // evaluation-mode logits for a batch node [B,1,H,W] -> [B,num_classes]
  virtual TRef logits_graph(Tape& t, TRef x) const = 0;
  // evaluation-mode training-objective value (mean over the batch); the loss
  // FGSM differentiates: cross-entropy for the ConvNet, margin loss for the
  // CapsNet
  virtual TRef loss_graph(Tape& t, TRef x, const std::vector<int>& labels) const = 0;
  // model probability vector F(x) per batch row
  virtual Tensor probs(const Tensor& x_batch) const = 0;

  Tensor logits(const Tensor& x_batch) const;
  std::vector<int> predict(const Tensor& x_batch) const;
  int predict_one(const Tensor& image) const;  // [H,W] or [1,H,W] or [1,1,H,W]

  // accuracy over a dataset, optionally under a fixed additive perturbation
  // (applied with clipping to [0,1])
  double accuracy(const LabeledDataset& data, const Tensor* delta = nullptr,
                  std::size_t eval_batch = 32) const;

  // gradient of one logit w.r.t. the input image
  Tensor input_gradient(const Tensor& image, int logit_index) const;
};

// batches a [H,W] or [1,H,W] image into [1,1,H,W]
Tensor as_batch(const Tensor& image);

// x + delta clipped into the unit box
Tensor clip01_add(const Tensor& x, const Tensor& delta);

struct ParamBinding;

// Trainable extension: training-mode loss (dropout active, batch-norm batch
// statistics) plus parameter access for the optimizer and checkpoints.
class TrainableModel : public Classifier {
 public:
  virtual TRef train_loss_graph(Tape& t, TRef x, const std::vector<int>& labels, Rng& rng,
                                ParamBinding& pb) = 0;
  virtual std::vector<Param*> params() = 0;
  // every tensor that defines the model, including running statistics
  virtual std::vector<std::pair<std::string, Tensor*>> state_blocks() = 0;
  virtual std::string config_json() const = 0;
};

struct TrainConfig {
  int epochs = 15;
  int batch = 128;
  int micro_batch = 16;  // gradient-accumulation slice; does not change results
  double lr = 1e-3;
  std::size_t train_limit = 0;  // 0: whole set
  std::uint64_t seed = 1;
  bool verbose = false;
};

struct TrainHistory {
  std::vector<double> train_loss;     // per epoch
  std::vector<double> test_accuracy;  // per epoch
};

// Adam training loop shared by both models. Deterministic from cfg.seed.
// Aborts with a diagnostic if the loss turns NaN.
TrainHistory train_model(TrainableModel& model, const LabeledDataset& train,
                         const LabeledDataset& test, const TrainConfig& cfg);

}  // namespace capslab
