#pragma once

#include <cstdint>
#include <vector>

#include "capslab/tensor.hpp"

namespace capslab {

struct TsneConfig {
  double perplexity = 5.0;
  int iterations = 1000;
  int exaggeration_iters = 100;
  double exaggeration = 4.0;
  double learning_rate = 50.0;
  double momentum_early = 0.5;
  double momentum_late = 0.8;
  int momentum_switch_iter = 250;
  double perplexity_tol = 1e-6;  // bisection stops within this of the target
  std::uint64_t seed = 0;
};

struct EmbeddingResult {
  std::vector<double> coords;     // [points][2], row-major
  std::vector<double> kl_trace;   // KL divergence per accepted iterate
  double final_kl = 0.0;
  int exaggeration_iters = 0;     // trace index where exaggeration ended
  std::size_t points = 0;
  bool jittered = false;  // duplicate inputs were perturbed
};

// Exact t-SNE: Gaussian input affinities with per-point bandwidths bisected
// to the target perplexity, symmetrized P, Student-t output kernel, gradient
// descent with momentum and early exaggeration. After the exaggeration phase
// each step is accepted only if KL does not increase (backtracking on the
// step size), so the recorded trace is non-increasing from that point on.
EmbeddingResult tsne_embed(const std::vector<Tensor>& points, const TsneConfig& cfg);

// achieved perplexity of row i of the Gaussian affinity matrix at a given
// bandwidth beta (exposed for verification)
double row_perplexity(const std::vector<double>& sq_dists, std::size_t i, double beta);

}  // namespace capslab
