#pragma once

#include "capslab/classifier.hpp"
#include "capslab/layers.hpp"

namespace capslab {

struct ConvNetConfig {
  int input_hw = 28;
  int conv1_channels = 16;
  int conv2_channels = 32;
  int dense_units = 128;
  double dropout_rate = 0.5;
  int num_classes = 10;
  bool linear_only = false;  // degenerate flatten->dense variant

  std::string to_json() const;
  static ConvNetConfig from_json(const std::string& js);
};

// Baseline: two (conv5x5 + batch-norm + relu + 2x2 max-pool) blocks, a dense
// hidden layer with dropout, and a 10-way dense head. F(x) = softmax(Z(x)).
class ConvNetModel : public TrainableModel {
 public:
  ConvNetModel(ConvNetConfig cfg, std::uint64_t init_seed);

  std::string kind() const override { return "convnet"; }
  int num_classes() const override { return cfg_.num_classes; }
  Shape input_shape() const override { return {1, cfg_.input_hw, cfg_.input_hw}; }
  TRef logits_graph(Tape& t, TRef x) const override;
  TRef loss_graph(Tape& t, TRef x, const std::vector<int>& labels) const override;
  Tensor probs(const Tensor& x_batch) const override;

  TRef train_loss_graph(Tape& t, TRef x, const std::vector<int>& labels, Rng& rng,
                        ParamBinding& pb) override;
  std::vector<Param*> params() override;
  std::vector<std::pair<std::string, Tensor*>> state_blocks() override;
  std::string config_json() const override { return cfg_.to_json(); }

  const ConvNetConfig& config() const { return cfg_; }

 private:
  TRef body(Tape& t, TRef x, bool training, Rng* rng, ParamBinding* pb) const;

  ConvNetConfig cfg_;
  Conv2dLayer conv1_, conv2_;
  mutable BatchNorm2d bn1_, bn2_;
  DenseLayer dense1_, dense2_;
};

}  // namespace capslab
