#pragma once

#include "capslab/adam.hpp"
#include "capslab/ops.hpp"
#include "capslab/rng.hpp"

namespace capslab {

// Records which tape leaf holds which parameter so gradients can be folded
// back after backward(). Training passes a binding; evaluation passes none
// and parameters enter the tape as constants.
struct ParamBinding {
  std::vector<std::pair<Param*, TRef>> bound;

  TRef bind(Tape& t, Param& p) {
    TRef r = t.leaf(p.value, true);
    bound.push_back({&p, r});
    return r;
  }

  // adds each leaf grad into its parameter's persistent accumulator
  void fold() const;
};

// leaf for a parameter: bound when pb is given, constant otherwise
TRef param_leaf(Tape& t, const Param& p, ParamBinding* pb);

// Layer parameter bundles. Forward methods build onto a caller-owned tape;
// parameters are copied to leaves per call so tapes never alias model state.

struct Conv2dLayer {
  Param w;  // [Cout, Cin, kh, kw]
  Param b;  // [Cout]
  int stride = 1;
  int pad = 0;

  Conv2dLayer() = default;
  Conv2dLayer(const std::string& name, int cin, int cout, int k, int stride, Rng& rng);
  TRef forward(Tape& t, TRef x, ParamBinding* pb = nullptr) const;
};

struct DenseLayer {
  Param w;  // [In, Out]
  Param b;  // [Out]

  DenseLayer() = default;
  DenseLayer(const std::string& name, int in, int out, Rng& rng);
  TRef forward(Tape& t, TRef x, ParamBinding* pb = nullptr) const;  // x [B, In]
};

struct BatchNorm2d {
  Param gamma, beta;         // [C]
  Tensor run_mean, run_var;  // running statistics, updated in training forward
  double eps = 1e-5;
  double momentum = 0.1;

  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, int channels);
  // training=true normalizes with batch statistics and updates the running
  // buffers; training=false uses the frozen running statistics
  TRef forward(Tape& t, TRef x, bool training, ParamBinding* pb = nullptr);
};

// inverted dropout: scales kept activations by 1/keep at train time
TRef dropout(Tape& t, TRef x, double rate, Rng& rng);

}  // namespace capslab
