#include <cmath>
#include <filesystem>
#include <fstream>

#include "capslab/attack_io.hpp"
#include "capslab/attacks.hpp"
#include "capslab/ops.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace capslab;
using namespace capslab::testing;
namespace O = capslab::ops;

namespace {

// minimal affine model with analytically known decision boundaries
class AffineClassifier : public Classifier {
 public:
  AffineClassifier(Tensor weights, Tensor bias, Shape input)
      : w_(std::move(weights)), b_(std::move(bias)), input_(std::move(input)) {}

  std::string kind() const override { return "affine"; }
  int num_classes() const override { return static_cast<int>(w_.shape()[1]); }
  Shape input_shape() const override { return input_; }

  TRef logits_graph(Tape& t, TRef x) const override {
    const std::int64_t B = x.shape()[0];
    TRef flat = O::reshape(x, {B, w_.shape()[0]});
    return O::add(O::matmul(flat, t.constant(w_)), t.constant(b_));
  }

  TRef loss_graph(Tape& t, TRef x, const std::vector<int>& labels) const override {
    return O::cross_entropy_with_logits(logits_graph(t, x), labels);
  }

  Tensor probs(const Tensor& x_batch) const override { return O::softmax_rows(logits(x_batch)); }

  const Tensor& weights() const { return w_; }
  const Tensor& bias() const { return b_; }

 private:
  Tensor w_;  // [n, C]
  Tensor b_;  // [C]
  Shape input_;
};

// always predicts class 9 regardless of input
class ConstantClassifier : public Classifier {
 public:
  explicit ConstantClassifier(Shape input) : input_(std::move(input)) {}
  std::string kind() const override { return "constant"; }
  int num_classes() const override { return 10; }
  Shape input_shape() const override { return input_; }
  TRef logits_graph(Tape& t, TRef x) const override {
    const std::int64_t B = x.shape()[0];
    Tensor z({B, 10});
    for (std::int64_t b = 0; b < B; ++b) z[b * 10 + 9] = 1.0;
    (void)x;
    return t.constant(std::move(z));
  }
  TRef loss_graph(Tape& t, TRef x, const std::vector<int>& labels) const override {
    return O::cross_entropy_with_logits(logits_graph(t, x), labels);
  }
  Tensor probs(const Tensor& x_batch) const override { return O::softmax_rows(logits(x_batch)); }

 private:
  Shape input_;
};

double recomputed_norm(const AttackResult& r) {
  double s = 0.0;
  for (std::int64_t i = 0; i < r.delta.numel(); ++i) s += r.delta[i] * r.delta[i];
  return std::sqrt(s);
}

void check_result_invariants(const AttackResult& r) {
  // box feasibility and the norm ledger
  for (std::int64_t i = 0; i < r.delta.numel(); ++i) {
    const double v = r.original[i] + r.delta[i];
    CHECK(v >= -1e-12);
    CHECK(v <= 1.0 + 1e-12);
  }
  CHECK(std::fabs(recomputed_norm(r) - r.norm) <= 1e-9);
}

}  // namespace

TEST_CASE("deepfool on an affine model equals the analytic projection") {
  Rng rng(31);
  const std::int64_t n = 12;
  const int C = 4;
  Tensor w = random_tensor({n, C}, rng, -0.4, 0.4);
  Tensor b = random_tensor({C}, rng, -0.1, 0.1);
  AffineClassifier model(w, b, {1, 1, n});

  for (int trial = 0; trial < 10; ++trial) {
    Tensor x = random_tensor({1, n}, rng, 0.35, 0.65);
    const Tensor z = model.logits(x.reshaped({1, 1, 1, n}));
    int c = 0;
    for (int i = 1; i < C; ++i)
      if (z[i] > z[c]) c = i;

    // analytic nearest-hyperplane distance from x
    double dist = 1e300;
    for (int i = 0; i < C; ++i) {
      if (i == c) continue;
      double wn2 = 0.0;
      for (std::int64_t k = 0; k < n; ++k) {
        const double d = w[k * C + i] - w[k * C + c];
        wn2 += d * d;
      }
      dist = std::min(dist, std::fabs(z[i] - z[c]) / std::sqrt(wn2));
    }

    DeepFoolConfig cfg;
    cfg.max_iterations = 1;   // a single exact projection step
    cfg.overshoot = 1.0;      // pre-overshoot norm
    cfg.step_norm_cap = 1e9;  // unconstrained step
    const AttackResult r = deepfool_attack(model, x, c, cfg);
    CHECK(std::fabs(r.norm - dist) <= 1e-6);
    check_result_invariants(r);
  }
}

TEST_CASE("deepfool: already-misclassified input returns zero perturbation") {
  Rng rng(33);
  Tensor w = random_tensor({6, 3}, rng);
  Tensor b = random_tensor({3}, rng);
  AffineClassifier model(w, b, {1, 1, 6});
  Tensor x = random_tensor({1, 6}, rng, 0.3, 0.7);
  const int pred = model.predict_one(x);
  const int wrong_true = (pred + 1) % 3;  // claim a different true label
  const AttackResult r = deepfool_attack(model, x, wrong_true, DeepFoolConfig{});
  CHECK(r.success);
  CHECK(r.iterations == 0);
  CHECK(r.norm == 0.0);
}

TEST_CASE("deepfool flips an affine model with default settings") {
  Rng rng(35);
  Tensor w = random_tensor({8, 5}, rng, -0.5, 0.5);
  Tensor b = random_tensor({5}, rng, -0.1, 0.1);
  AffineClassifier model(w, b, {1, 1, 8});
  int flips = 0;
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x = random_tensor({1, 8}, rng, 0.3, 0.7);
    const int truth = model.predict_one(x);
    const AttackResult r = deepfool_attack(model, x, truth, DeepFoolConfig{});
    if (r.success) {
      ++flips;
      CHECK(r.predicted_label != truth);
    }
    check_result_invariants(r);
  }
  CHECK(flips == 10);
}

TEST_CASE("cw attack reaches within 5% of the analytic margin distance") {
  Rng rng(41);
  const std::int64_t n = 10;
  // two classes; the margin constraint z_t - z_other >= kappa is one halfspace
  Tensor w({n, 2});
  for (std::int64_t k = 0; k < n; ++k) {
    w[k * 2 + 0] = rng.uniform(-1.5, 1.5);
    w[k * 2 + 1] = rng.uniform(-1.5, 1.5);
  }
  Tensor b({2}, DVec{0.3, 0.0});  // bias nudged below so class 0 wins at x
  Tensor x = random_tensor({1, n}, rng, 0.45, 0.55);
  {
    // make class 0 win at x with a modest margin
    double z0 = 0.0, z1 = 0.0;
    for (std::int64_t k = 0; k < n; ++k) {
      z0 += x[k] * w[k * 2 + 0];
      z1 += x[k] * w[k * 2 + 1];
    }
    b[0] = z1 - z0 + 0.7;  // z0 + b0 = z1 + 0.7
  }
  AffineClassifier model(w, b, {1, 1, n});
  REQUIRE(model.predict_one(x) == 0);
  const Tensor z = model.logits(x.reshaped({1, 1, 1, n}));

  CwConfig cfg;
  cfg.kappa = 1.0;
  cfg.adam_steps = 500;
  cfg.adam_lr = 5e-3;

  double wn2 = 0.0;
  for (std::int64_t k = 0; k < n; ++k) {
    const double d = w[k * 2 + 1] - w[k * 2 + 0];
    wn2 += d * d;
  }
  const double analytic = (cfg.kappa - (z[1] - z[0])) / std::sqrt(wn2);

  const AttackResult r = cw_attack(model, x, 0, 1, cfg);
  REQUIRE(r.success);
  CHECK(r.norm >= analytic - 1e-9);  // can never beat the true minimum
  CHECK(r.norm <= analytic * 1.05);
  check_result_invariants(r);

  // kappa margin invariant on the emitted adversarial image
  const Tensor za = model.logits(clip01_add(x, r.delta).reshaped({1, 1, 1, n}));
  CHECK(za[1] - za[0] >= cfg.kappa - 1e-6);
  CHECK(r.predicted_label == 1);
}

TEST_CASE("cw attack on an already-confident target returns a tiny delta") {
  Rng rng(43);
  const std::int64_t n = 8;
  Tensor w = random_tensor({n, 2}, rng, -0.2, 0.2);
  Tensor b({2}, DVec{0.0, 5.0});  // class 1 wins everywhere with huge margin
  AffineClassifier model(w, b, {1, 1, n});
  Tensor x = random_tensor({1, n}, rng, 0.4, 0.6);
  REQUIRE(model.predict_one(x) == 1);

  CwConfig cfg;
  cfg.kappa = 1.0;
  cfg.adam_steps = 200;
  const AttackResult r = cw_attack(model, x, 0, 1, cfg);
  CHECK(r.success);
  CHECK(r.norm <= 1e-3);
}

TEST_CASE("boundary attack approaches the analytic distance on a 2-D model") {
  Rng rng(47);
  // two pixels, two classes, boundary z0 = z1
  Tensor w({2, 2});
  w[0 * 2 + 0] = 1.0;
  w[0 * 2 + 1] = -1.0;
  w[1 * 2 + 0] = -1.0;
  w[1 * 2 + 1] = 1.0;
  Tensor b({2}, DVec{0.25, 0.0});
  AffineClassifier model(w, b, {1, 1, 2});

  Tensor x({1, 2});
  x[0] = 0.65;
  x[1] = 0.25;
  REQUIRE(model.predict_one(x) == 0);
  // line: (z1-z0)(p) = 0 -> -2 p0 + 2 p1 - 0.25 = 0; distance from x
  const double analytic = std::fabs(-2.0 * x[0] + 2.0 * x[1] - 0.25) / std::sqrt(8.0);

  BoundaryConfig cfg;
  Rng attack_rng(derive_seed(9, "boundary-test"));
  std::vector<double> trace;
  const AttackResult r = boundary_attack(model, x, 0, cfg, attack_rng, &trace);
  REQUIRE(r.success);
  CHECK(r.predicted_label == 1);
  check_result_invariants(r);
  CHECK(r.norm >= analytic - 1e-9);
  CHECK(r.norm <= analytic * 1.2);

  // accepted distances never increase
  for (std::size_t i = 1; i < trace.size(); ++i) CHECK(trace[i] <= trace[i - 1] + 1e-12);
}

TEST_CASE("boundary attack: already-misclassified input is immediate") {
  Rng rng(53);
  Tensor w = random_tensor({4, 3}, rng);
  Tensor b = random_tensor({3}, rng);
  AffineClassifier model(w, b, {1, 1, 4});
  Tensor x = random_tensor({1, 4}, rng, 0.3, 0.7);
  const int pred = model.predict_one(x);
  Rng attack_rng(1);
  const AttackResult r = boundary_attack(model, x, (pred + 1) % 3, BoundaryConfig{}, attack_rng);
  CHECK(r.success);
  CHECK(r.norm == 0.0);
  CHECK(r.iterations == 0);
}

TEST_CASE("fgsm produces exactly {-eps, 0, +eps} components") {
  Rng rng(61);
  const std::int64_t n = 9;
  // class-1 weights differ from class-0 by a known sign pattern
  Tensor w({n, 2});
  for (std::int64_t k = 0; k < n; ++k) {
    w[k * 2 + 0] = 0.0;
    w[k * 2 + 1] = (k % 3 == 0) ? 0.5 : (k % 3 == 1 ? -0.5 : 0.0);
  }
  AffineClassifier model(w, Tensor({2}), {1, 1, n});
  Tensor x = random_tensor({1, 1, 1, n}, rng, 0.3, 0.7);

  const Tensor d0 = fgsm_step(model, x, {0}, 0.0);
  for (std::int64_t i = 0; i < n; ++i) CHECK(d0[i] == 0.0);

  const double eps = 0.1;
  const Tensor d = fgsm_step(model, x, {0}, eps);
  // dL/dx = p1 * (w1 - w0): sign pattern follows w1 exactly
  for (std::int64_t k = 0; k < n; ++k) {
    const double expect = (k % 3 == 0) ? eps : (k % 3 == 1 ? -eps : 0.0);
    CHECK(d[k] == expect);
  }
}

TEST_CASE("universal perturbation terminates immediately on a hopeless model") {
  LabeledDataset fold;
  fold.height = fold.width = 4;
  Rng rng(71);
  for (int i = 0; i < 30; ++i) {
    fold.images.push_back(random_tensor({4, 4}, rng, 0.0, 1.0));
    fold.labels.push_back(i % 9);  // never class 9
  }
  ConstantClassifier model({1, 4, 4});
  Rng attack_rng(3);
  const UniversalResult r = universal_perturbation(model, fold, UniversalConfig{}, attack_rng);
  CHECK(r.success);
  CHECK(r.outer_iterations == 0);
  CHECK(r.norm == 0.0);
  for (std::int64_t i = 0; i < r.delta.numel(); ++i) CHECK(r.delta[i] == 0.0);
  REQUIRE(!r.accuracy_trace.empty());
  CHECK(r.accuracy_trace.front() == 0.0);
}

TEST_CASE("universal perturbation drives an affine model below threshold") {
  Rng rng(73);
  const std::int64_t n = 16;
  Tensor w = random_tensor({n, 3}, rng, -0.5, 0.5);
  AffineClassifier model(w, Tensor({3}), {1, 4, 4});
  LabeledDataset fold;
  fold.height = fold.width = 4;
  for (int i = 0; i < 60; ++i) {
    Tensor img = random_tensor({4, 4}, rng, 0.2, 0.8);
    fold.images.push_back(img);
    fold.labels.push_back(model.predict_one(img));  // labels = model's own output
  }
  UniversalConfig cfg;
  cfg.epsilon = 0.05;
  cfg.batch_size = 16;
  Rng attack_rng(derive_seed(5, "universal-test"));
  const UniversalResult r = universal_perturbation(model, fold, cfg, attack_rng);
  CHECK(r.success);
  REQUIRE(!r.accuracy_trace.empty());
  CHECK(r.accuracy_trace.back() < cfg.accuracy_threshold);
  CHECK(r.norm > 0.0);
}

TEST_CASE("transfer evaluation: self-transfer and zero-delta baselines") {
  Rng rng(83);
  Tensor w = random_tensor({8, 4}, rng, -0.5, 0.5);
  Tensor b = random_tensor({4}, rng, -0.1, 0.1);
  AffineClassifier model(w, b, {1, 1, 8});

  std::vector<AttackResult> results;
  int base_errors = 0;
  for (int i = 0; i < 20; ++i) {
    Tensor x = random_tensor({1, 8}, rng, 0.3, 0.7);
    const int truth = model.predict_one(x);
    AttackResult r = deepfool_attack(model, x, truth, DeepFoolConfig{});
    r.sample_index = static_cast<std::size_t>(i);
    results.push_back(std::move(r));
  }
  // untargeted self-transfer of successful results is total by construction
  const TransferStats self = transfer_evaluate(results, model, /*targeted=*/false);
  CHECK(self.fooling_rate == 1.0);

  // zero deltas reproduce the base error rate on those samples
  std::vector<AttackResult> zeroed = results;
  for (auto& r : zeroed) {
    r.delta = Tensor(r.delta.shape());
    r.success = true;  // force inclusion
    const int pred = model.predict_one(r.original);
    if (pred != r.true_label) ++base_errors;
  }
  const TransferStats zero = transfer_evaluate(zeroed, model, /*targeted=*/false);
  CHECK(zero.fooling_rate ==
        doctest::Approx(static_cast<double>(base_errors) / zeroed.size()));
}

TEST_CASE("attack result files round-trip and deltas rejoin by index") {
  Rng rng(91);
  std::vector<AttackResult> results;
  for (int i = 0; i < 5; ++i) {
    AttackResult r;
    r.sample_index = static_cast<std::size_t>(10 + i);
    r.original = random_tensor({3, 3}, rng, 0.0, 1.0);
    r.delta = random_tensor({3, 3}, rng, -0.1, 0.1);
    r.norm = recomputed_norm(r);
    r.success = i % 2 == 0;
    r.true_label = i % 10;
    r.predicted_label = (i + 1) % 10;
    r.target_label = i % 2 ? -1 : (i + 3) % 10;
    r.iterations = 17 * i;
    r.wall_seconds = 123.0;  // must not leak into the file
    results.push_back(std::move(r));
  }
  const auto dir = std::filesystem::temp_directory_path();
  const std::string jl = (dir / "caps_results.jsonl").string();
  const std::string sc = (dir / "caps_results.delta").string();
  write_results_jsonl(jl, results);
  write_delta_sidecar(sc, results);

  auto loaded = read_results_jsonl(jl);
  REQUIRE(loaded.size() == results.size());
  read_delta_sidecar(sc, loaded);
  for (std::size_t i = 0; i < results.size(); ++i) {
    CHECK(loaded[i].sample_index == results[i].sample_index);
    CHECK(loaded[i].norm == results[i].norm);
    CHECK(loaded[i].success == results[i].success);
    CHECK(loaded[i].iterations == results[i].iterations);
    CHECK(loaded[i].wall_seconds == 0.0);
    for (std::int64_t j = 0; j < 9; ++j) CHECK(loaded[i].delta[j] == results[i].delta[j]);
  }

  // determinism: writing the same results twice gives identical bytes
  const std::string jl2 = (dir / "caps_results2.jsonl").string();
  write_results_jsonl(jl2, results);
  std::ifstream a(jl), c(jl2);
  const std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  const std::string sb((std::istreambuf_iterator<char>(c)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);
}

TEST_CASE("attack determinism: same seed gives identical results") {
  Rng rng(97);
  Tensor w = random_tensor({6, 3}, rng, -0.5, 0.5);
  AffineClassifier model(w, Tensor({3}), {1, 1, 6});
  Tensor x = random_tensor({1, 6}, rng, 0.3, 0.7);
  const int truth = model.predict_one(x);

  Rng r1(derive_seed(7, "bd", 0)), r2(derive_seed(7, "bd", 0));
  const AttackResult a = boundary_attack(model, x, truth, BoundaryConfig{}, r1);
  const AttackResult b = boundary_attack(model, x, truth, BoundaryConfig{}, r2);
  CHECK(a.norm == b.norm);
  CHECK(a.iterations == b.iterations);
  for (std::int64_t i = 0; i < a.delta.numel(); ++i) CHECK(a.delta[i] == b.delta[i]);
}
