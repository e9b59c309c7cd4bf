#include <cmath>

#include "capslab/ops.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace capslab;
using namespace capslab::testing;
namespace O = capslab::ops;

namespace {
constexpr double kGradTol = 1e-5;
}

TEST_CASE("trivial op identities") {
  Tape t;
  // tanh at the origin: value 0, slope 1
  TRef x = t.leaf(Tensor::scalar(0.0), true);
  TRef y = O::tanh(x);
  CHECK(y.value().item() == 0.0);
  t.backward(y);
  CHECK(x.grad()[0] == doctest::Approx(1.0).epsilon(1e-12));

  // softmax of a constant row is uniform
  Tape t2;
  TRef z = t2.leaf(Tensor({3}, {0.7, 0.7, 0.7}));
  TRef s = O::softmax(z, 0);
  for (int i = 0; i < 3; ++i) CHECK(s.value()[i] == doctest::Approx(1.0 / 3).epsilon(1e-14));
}

TEST_CASE("backward of sum of squares") {
  Tape t;
  TRef x = t.leaf(Tensor({3}, {1.0, 2.0, 3.0}), true);
  TRef root = O::sum_all(O::mul(x, x));
  t.backward(root);
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(4.0));
  CHECK(x.grad()[2] == doctest::Approx(6.0));
}

TEST_CASE("l2 norm gradient at the origin is zero") {
  Tape t;
  TRef x = t.leaf(Tensor({4}), true);
  TRef root = O::l2_norm(x);
  CHECK(root.value().item() == 0.0);
  t.backward(root);
  for (int i = 0; i < 4; ++i) CHECK(x.grad()[i] == 0.0);
}

TEST_CASE("backward rejects non-scalar roots") {
  Tape t;
  TRef x = t.leaf(Tensor({2}, {1.0, 2.0}), true);
  TRef y = O::scale(x, 2.0);
  CHECK_THROWS_AS(t.backward(y), ShapeError);
}

TEST_CASE("shape errors carry the op and shapes") {
  Tape t;
  TRef a = t.leaf(Tensor({2, 3}));
  TRef b = t.leaf(Tensor({4, 5}));
  try {
    O::matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("[4, 5]") != std::string::npos);
  }
}

TEST_CASE("arctanh domain error") {
  Tape t;
  TRef x = t.leaf(Tensor({2}, {0.5, 1.5}));
  CHECK_THROWS_AS(O::arctanh(x), DomainError);
}

TEST_CASE("arctanh inverts tanh to 1e-10 for |z| <= 3") {
  Tape t;
  for (double z = -3.0; z <= 3.0; z += 0.125) {
    TRef x = t.leaf(Tensor::scalar(z));
    TRef back = O::arctanh(O::tanh(x));
    CHECK(std::fabs(back.value().item() - z) < 1e-10);
  }
}

TEST_CASE("softmax rows form a probability simplex") {
  Rng rng(5);
  Tape t;
  TRef x = t.leaf(random_tensor({7, 10}, rng, -30.0, 30.0));
  TRef s = O::softmax(x, 1);
  for (int r = 0; r < 7; ++r) {
    double sum = 0.0;
    for (int c = 0; c < 10; ++c) {
      const double p = s.value()[r * 10 + c];
      CHECK(p >= 0.0);
      sum += p;
    }
    CHECK(std::fabs(sum - 1.0) <= 1e-12);
  }
}

TEST_CASE("sign has zero gradient and exact {-eps,0,eps} outputs") {
  Tape t;
  TRef x = t.leaf(Tensor({3}, {2.5, -0.1, 0.0}), true);
  TRef y = O::sign(x);
  CHECK(y.value()[0] == 1.0);
  CHECK(y.value()[1] == -1.0);
  CHECK(y.value()[2] == 0.0);
  TRef root = O::sum_all(y);
  t.backward(root);
  for (int i = 0; i < 3; ++i) CHECK(x.grad()[i] == 0.0);
}

TEST_CASE("conv2d matches a direct-summation oracle") {
  // 3x3 image, 3x3 kernel, stride 1: single output = Frobenius inner product
  Rng rng(9);
  Tensor img = random_tensor({1, 1, 3, 3}, rng);
  Tensor ker = random_tensor({1, 1, 3, 3}, rng);
  double expect = 0.0;
  for (int i = 0; i < 9; ++i) expect += img[i] * ker[i];
  Tape t;
  TRef y = O::conv2d(t.leaf(img), t.leaf(ker), TRef{});
  CHECK(y.value().numel() == 1);
  CHECK(y.value().item() == doctest::Approx(expect).epsilon(1e-13));

  // general case vs naive loops: 2 images, 3 in channels, 2 out, stride 2, pad 1
  Tensor x = random_tensor({2, 3, 7, 6}, rng);
  Tensor w = random_tensor({2, 3, 3, 3}, rng);
  Tensor b = random_tensor({2}, rng);
  Tape t2;
  TRef yy = O::conv2d(t2.leaf(x), t2.leaf(w), t2.leaf(b), 2, 1);
  const int OH = (7 + 2 - 3) / 2 + 1, OW = (6 + 2 - 3) / 2 + 1;
  REQUIRE(yy.shape() == Shape{2, 2, OH, OW});
  for (int n = 0; n < 2; ++n)
    for (int co = 0; co < 2; ++co)
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
          double acc = b[co];
          for (int ci = 0; ci < 3; ++ci)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int iy = oy * 2 + ky - 1, ix = ox * 2 + kx - 1;
                if (iy < 0 || iy >= 7 || ix < 0 || ix >= 6) continue;
                acc += x[((n * 3 + ci) * 7 + iy) * 6 + ix] * w[((co * 3 + ci) * 3 + ky) * 3 + kx];
              }
          const double got = yy.value()[((n * 2 + co) * OH + oy) * OW + ox];
          CHECK(got == doctest::Approx(acc).epsilon(1e-12));
        }
}

TEST_CASE("gradient check: every catalog op") {
  Rng rng(1234);

  auto check1 = [&](const char* name, const std::function<TRef(Tape&, TRef)>& op, Tensor in,
                    double tol = kGradTol) {
    const double err = grad_check(
        [&](Tape& t, std::vector<TRef>& xs) { return weighted_sum(t, op(t, xs[0]), 99); },
        {std::move(in)});
    INFO(std::string(name));
    CHECK(err <= tol);
  };

  check1("relu", [](Tape&, TRef x) { return O::relu(x); }, random_tensor({4, 5}, rng, 0.1, 1.0));
  {
    // relu with mixed signs away from the kink
    Tensor in = random_tensor({20}, rng, -1.0, 1.0);
    for (std::int64_t i = 0; i < in.numel(); ++i)
      if (std::fabs(in[i]) < 0.05) in[i] = 0.1;
    check1("relu_mixed", [](Tape&, TRef x) { return O::relu(x); }, std::move(in));
  }
  check1("tanh", [](Tape&, TRef x) { return O::tanh(x); }, random_tensor({3, 4}, rng, -2.0, 2.0));
  check1("arctanh", [](Tape&, TRef x) { return O::arctanh(x); },
         random_tensor({6}, rng, -0.9, 0.9));
  check1("sigmoid", [](Tape&, TRef x) { return O::sigmoid(x); },
         random_tensor({6}, rng, -3.0, 3.0));
  check1("sqrt", [](Tape&, TRef x) { return O::sqrt(x); }, random_tensor({6}, rng, 0.2, 2.0));
  check1("square", [](Tape&, TRef x) { return O::square(x); }, random_tensor({6}, rng));
  check1("reciprocal", [](Tape&, TRef x) { return O::reciprocal(x); },
         random_tensor({6}, rng, 0.5, 2.0));
  check1("scale", [](Tape&, TRef x) { return O::scale(x, -2.7); }, random_tensor({6}, rng));
  check1("add_scalar", [](Tape&, TRef x) { return O::add_scalar(x, 0.37); },
         random_tensor({6}, rng));
  {
    // clamp active on both sides, samples away from the boundaries
    Tensor in({8}, {-0.9, -0.4, -0.1, 0.05, 0.2, 0.45, 0.8, 1.4});
    check1("clamp", [](Tape&, TRef x) { return O::clamp(x, -0.5, 0.5); }, std::move(in));
  }
  check1("softmax", [](Tape&, TRef x) { return O::softmax(x, 1); },
         random_tensor({3, 5}, rng, -2.0, 2.0));
  check1("softmax_mid_axis", [](Tape&, TRef x) { return O::softmax(x, 1); },
         random_tensor({2, 4, 3}, rng, -2.0, 2.0));
  check1("sum_all", [](Tape&, TRef x) { return O::sum_all(x); }, random_tensor({7}, rng));
  check1("mean_all", [](Tape&, TRef x) { return O::mean_all(x); }, random_tensor({7}, rng));
  check1("sum_axes_mid", [](Tape&, TRef x) { return O::sum_axes(x, {1}, false); },
         random_tensor({3, 4, 2}, rng));
  check1("sum_axes_keepdim", [](Tape&, TRef x) { return O::sum_axes(x, {0, 2}, true); },
         random_tensor({3, 4, 2}, rng));
  check1("mean_axes", [](Tape&, TRef x) { return O::mean_axes(x, {0, 2, 3}, true); },
         random_tensor({2, 3, 4, 4}, rng));
  check1("l2_norm", [](Tape&, TRef x) { return O::l2_norm(x); },
         random_tensor({9}, rng, 0.2, 1.0));
  check1("reduce_max", [](Tape&, TRef x) { return O::reduce_max_all(x); },
         Tensor({5}, {0.1, 0.9, 0.3, -0.2, 0.5}));
  check1("reshape", [](Tape&, TRef x) { return O::reshape(x, {6}); },
         random_tensor({2, 3}, rng));
  check1("permute", [](Tape&, TRef x) { return O::permute(x, {2, 0, 1}); },
         random_tensor({2, 3, 4}, rng));
  check1("slice", [](Tape&, TRef x) { return O::slice_axis(x, 1, 1, 2); },
         random_tensor({2, 4, 3}, rng));
  check1("pick", [](Tape&, TRef x) { return O::pick(x, 3); }, random_tensor({6}, rng));
  check1("max_pool", [](Tape&, TRef x) { return O::max_pool2d(x, 2, 2); },
         random_tensor({2, 2, 4, 4}, rng));
  check1("squash", [](Tape&, TRef x) { return O::squash(x); },
         random_tensor({3, 4}, rng, -1.5, 1.5));
  check1("sign_zero_by_convention",
         [](Tape&, TRef x) { return O::sign(x); }, random_tensor({5}, rng, 0.2, 1.0));

  auto check2 = [&](const char* name, const std::function<TRef(Tape&, TRef, TRef)>& op, Tensor a,
                    Tensor b) {
    const double err = grad_check(
        [&](Tape& t, std::vector<TRef>& xs) {
          return weighted_sum(t, op(t, xs[0], xs[1]), 77);
        },
        {std::move(a), std::move(b)});
    INFO(std::string(name));
    CHECK(err <= kGradTol);
  };

  check2("add", [](Tape&, TRef a, TRef b) { return O::add(a, b); },
         random_tensor({3, 4}, rng), random_tensor({3, 4}, rng));
  check2("sub_broadcast", [](Tape&, TRef a, TRef b) { return O::sub(a, b); },
         random_tensor({3, 4}, rng), random_tensor({4}, rng));
  check2("mul_broadcast_row", [](Tape&, TRef a, TRef b) { return O::mul(a, b); },
         random_tensor({2, 3, 4}, rng), random_tensor({3, 1}, rng));
  check2("mul_broadcast_lane", [](Tape&, TRef a, TRef b) { return O::mul(a, b); },
         random_tensor({2, 3, 1}, rng), random_tensor({2, 3, 4}, rng));
  check2("add_broadcast_mid", [](Tape&, TRef a, TRef b) { return O::add(a, b); },
         random_tensor({2, 1, 4}, rng), random_tensor({2, 3, 4}, rng));
  check2("matmul", [](Tape&, TRef a, TRef b) { return O::matmul(a, b); },
         random_tensor({3, 5}, rng), random_tensor({5, 4}, rng));
  check2("conv2d", [](Tape&, TRef a, TRef b) { return O::conv2d(a, b, TRef{}, 1, 0); },
         random_tensor({2, 2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng));
  check2("conv2d_stride_pad",
         [](Tape&, TRef a, TRef b) { return O::conv2d(a, b, TRef{}, 2, 1); },
         random_tensor({1, 2, 6, 5}, rng), random_tensor({2, 2, 3, 3}, rng));
  check2("caps_predict", [](Tape&, TRef a, TRef b) { return O::caps_predict(a, b); },
         random_tensor({3, 2, 4}, rng), random_tensor({3, 4, 2, 5}, rng));
  check2("caps_weighted_sum",
         [](Tape&, TRef a, TRef b) { return O::caps_weighted_sum(a, b); },
         random_tensor({3, 2, 4}, rng), random_tensor({3, 2, 4, 5}, rng));
  check2("caps_agreement", [](Tape&, TRef a, TRef b) { return O::caps_agreement(a, b); },
         random_tensor({3, 2, 4, 5}, rng), random_tensor({2, 4, 5}, rng));

  {
    // conv bias path
    const double err = grad_check(
        [&](Tape& t, std::vector<TRef>& xs) {
          return weighted_sum(t, O::conv2d(xs[0], xs[1], xs[2], 1, 0), 31);
        },
        {random_tensor({2, 2, 4, 4}, rng), random_tensor({3, 2, 3, 3}, rng),
         random_tensor({3}, rng)});
    CHECK(err <= kGradTol);
  }
  {
    // concat joins gradients
    const double err = grad_check(
        [&](Tape& t, std::vector<TRef>& xs) {
          return weighted_sum(t, O::concat({xs[0], xs[1]}, 1), 32);
        },
        {random_tensor({2, 3}, rng), random_tensor({2, 2}, rng)});
    CHECK(err <= kGradTol);
  }
  {
    // fused cross entropy
    const std::vector<int> labels{1, 0, 3};
    const double err = grad_check(
        [&](Tape& t, std::vector<TRef>& xs) {
          (void)t;
          return O::cross_entropy_with_logits(xs[0], labels);
        },
        {random_tensor({3, 4}, rng, -2.0, 2.0)});
    CHECK(err <= kGradTol);
  }
}

TEST_CASE("gradient check: composite expression chain") {
  // deep composite exercising many ops at once
  Rng rng(2024);
  const double err = grad_check(
      [&](Tape& t, std::vector<TRef>& xs) {
        TRef h = O::conv2d(xs[0], xs[1], TRef{}, 1, 0);
        h = O::relu(h);
        h = O::max_pool2d(h, 2, 2);
        h = O::reshape(h, {2, h.numel() / 2});
        h = O::matmul(h, xs[2]);
        h = O::tanh(h);
        TRef s = O::softmax(h, 1);
        TRef picked = O::mul(s, s);
        return O::add(O::l2_norm(picked), O::mean_all(O::square(h)));
      },
      {random_tensor({2, 1, 6, 6}, rng), random_tensor({2, 1, 3, 3}, rng),
       random_tensor({8, 5}, rng)});
  CHECK(err <= kGradTol);
}

TEST_CASE("repeated backward with clear_grads") {
  Tape t;
  TRef x = t.leaf(Tensor({3}, {1.0, 2.0, 3.0}), true);
  TRef z = O::square(x);
  TRef r0 = O::pick(z, 0);
  TRef r2 = O::pick(z, 2);
  t.backward(r0);
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[2] == 0.0);
  t.clear_grads();
  t.backward(r2);
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[2] == doctest::Approx(6.0));
}
