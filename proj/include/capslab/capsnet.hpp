#pragma once

#include "capslab/classifier.hpp"
#include "capslab/layers.hpp"

namespace capslab {

// Routing-by-agreement over prediction vectors u_hat [N,B,J,D]: logits start
// at zero, coefficients are softmax over the output axis, outputs are squashed
// weighted sums, and agreements feed back for `iters` rounds. When
// coeff_trace is given, a detached copy of the [N,B,J] coefficient tensor is
// pushed per iteration.
TRef dynamic_routing(TRef u_hat, int iters, std::vector<Tensor>* coeff_trace = nullptr);

// margin loss over class-capsule lengths [B,K] with one-hot targets
TRef margin_loss(TRef lengths, const std::vector<int>& labels, double m_plus, double m_minus,
                 double lambda);

// weight * sum((recon - x)^2), averaged over the batch rows of [B, H*W]
TRef reconstruction_loss(TRef recon, TRef x_flat, double weight);

struct CapsNetConfig {
  std::string variant = "mnist";  // "mnist": conv9x9; "fashion": two conv3x3
  int input_hw = 28;
  int conv1_channels = 64;
  int conv2_channels = 0;     // fashion variant second conv (0: absent)
  int primary_channels = 32;  // capsule types in the primary layer
  int primary_dim = 8;
  int class_count = 10;
  int class_dim = 16;
  int routing_iters = 3;
  bool none_of_the_above = false;  // extra routed capsule excluded from Z(x)
  int decoder_hidden1 = 512;
  int decoder_hidden2 = 1024;
  double m_plus = 0.9;
  double m_minus = 0.1;
  double lambda = 0.5;
  double recon_weight = 0.0005;
  double eps_c = 1e-6;  // capsule-length clamp before arctanh

  std::string to_json() const;
  static CapsNetConfig from_json(const std::string& js);
};

// Dynamic-routing capsule network: conv stem, convolutional primary capsules
// (squashed 8-D vectors), densely routed 16-D class capsules. F(x)_i is the
// class-capsule length; Z(x) = arctanh(2*clamp(F) - 1).
class CapsNetModel : public TrainableModel {
 public:
  CapsNetModel(CapsNetConfig cfg, std::uint64_t init_seed);

  std::string kind() const override { return "capsnet"; }
  int num_classes() const override { return cfg_.class_count; }
  Shape input_shape() const override { return {1, cfg_.input_hw, cfg_.input_hw}; }
  TRef logits_graph(Tape& t, TRef x) const override;
  TRef loss_graph(Tape& t, TRef x, const std::vector<int>& labels) const override;
  Tensor probs(const Tensor& x_batch) const override;  // capsule lengths

  TRef train_loss_graph(Tape& t, TRef x, const std::vector<int>& labels, Rng& rng,
                        ParamBinding& pb) override;
  std::vector<Param*> params() override;
  std::vector<std::pair<std::string, Tensor*>> state_blocks() override;
  std::string config_json() const override { return cfg_.to_json(); }

  const CapsNetConfig& config() const { return cfg_; }
  int num_primary_capsules() const { return primary_count_; }

  // class-capsule lengths [B, class_count]; coefficient trace available for
  // invariant checks
  TRef lengths_graph(Tape& t, TRef x, ParamBinding* pb = nullptr,
                     std::vector<Tensor>* coeff_trace = nullptr) const;
  // lengths -> logits map (clamped arctanh)
  TRef logits_from_lengths(Tape& t, TRef lengths) const;

 private:
  struct Caps {
    TRef v_class;   // [B, class_count, class_dim]
    TRef lengths;   // [B, class_count]
  };
  Caps caps_forward(Tape& t, TRef x, ParamBinding* pb, std::vector<Tensor>* coeff_trace) const;

  CapsNetConfig cfg_;
  Conv2dLayer conv1_, conv2_, primary_;
  Param w_caps_;  // [N, primary_dim, J, class_dim]
  DenseLayer dec1_, dec2_, dec3_;
  int grid_ = 0;           // primary spatial grid side
  int primary_count_ = 0;  // N = primary_channels * grid^2
  int routed_out_ = 0;     // J = class_count (+1 with none-of-the-above)
};

}  // namespace capslab
