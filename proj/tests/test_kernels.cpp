#include <cmath>
#include <vector>

#include "capslab/kernels.hpp"
#include "capslab/rng.hpp"
#include "doctest.h"

using namespace capslab;

namespace {

std::vector<double> rand_vec(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

bool close(double a, double b, double tol = 1e-12) {
  return std::fabs(a - b) <= tol * std::max({1.0, std::fabs(a), std::fabs(b)});
}

struct IsaGuard {
  kern::Isa saved;
  explicit IsaGuard(kern::Isa want) : saved(kern::active_isa()) { kern::force_isa(want); }
  ~IsaGuard() { kern::force_isa(saved); }
};

}  // namespace

TEST_CASE("elementwise kernels agree across lanes") {
  if (!kern::cpu_has_avx2()) return;  // single-lane machine: nothing to compare
  Rng rng(42);
  for (const std::size_t n : {std::size_t{1}, std::size_t{3}, std::size_t{4}, std::size_t{7},
                              std::size_t{16}, std::size_t{33}, std::size_t{1000}}) {
    const auto a = rand_vec(n, rng);
    const auto b = rand_vec(n, rng);
    std::vector<double> r_scalar(n), r_simd(n);
    {
      IsaGuard g(kern::Isa::scalar);
      kern::ops().add(a.data(), b.data(), r_scalar.data(), n);
    }
    {
      IsaGuard g(kern::Isa::avx2);
      REQUIRE(kern::active_isa() == kern::Isa::avx2);
      kern::ops().add(a.data(), b.data(), r_simd.data(), n);
    }
    CHECK(r_scalar == r_simd);  // add/sub/mul are exact per element

    {
      IsaGuard g(kern::Isa::scalar);
      kern::ops().mul(a.data(), b.data(), r_scalar.data(), n);
    }
    {
      IsaGuard g(kern::Isa::avx2);
      kern::ops().mul(a.data(), b.data(), r_simd.data(), n);
    }
    CHECK(r_scalar == r_simd);

    double d_scalar, d_simd, s_scalar, s_simd, q_scalar, q_simd;
    {
      IsaGuard g(kern::Isa::scalar);
      d_scalar = kern::ops().dot(a.data(), b.data(), n);
      s_scalar = kern::ops().sum(a.data(), n);
      q_scalar = kern::ops().sumsq(a.data(), n);
    }
    {
      IsaGuard g(kern::Isa::avx2);
      d_simd = kern::ops().dot(a.data(), b.data(), n);
      s_simd = kern::ops().sum(a.data(), n);
      q_simd = kern::ops().sumsq(a.data(), n);
    }
    CHECK(close(d_scalar, d_simd, 1e-13));
    CHECK(close(s_scalar, s_simd, 1e-13));
    CHECK(close(q_scalar, q_simd, 1e-13));
  }
}

TEST_CASE("axpy and scale lanes agree") {
  if (!kern::cpu_has_avx2()) return;
  Rng rng(7);
  const std::size_t n = 137;
  const auto x = rand_vec(n, rng);
  auto y1 = rand_vec(n, rng);
  auto y2 = y1;
  {
    IsaGuard g(kern::Isa::scalar);
    kern::ops().axpy(0.37, x.data(), y1.data(), n);
  }
  {
    IsaGuard g(kern::Isa::avx2);
    kern::ops().axpy(0.37, x.data(), y2.data(), n);
  }
  for (std::size_t i = 0; i < n; ++i) CHECK(close(y1[i], y2[i], 1e-15));
}

namespace {

// textbook triple loop, the reference for every gemm variant
void naive_gemm(bool ta, bool tb, const std::vector<double>& A, const std::vector<double>& B,
                std::vector<double>& C, std::size_t M, std::size_t N, std::size_t K) {
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < N; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        const double av = ta ? A[k * M + i] : A[i * K + k];
        const double bv = tb ? B[j * K + k] : B[k * N + j];
        acc += av * bv;
      }
      C[i * N + j] += acc;
    }
}

}  // namespace

TEST_CASE("gemm variants match the naive oracle on both lanes") {
  Rng rng(3);
  const std::size_t dims[][3] = {{1, 1, 1},   {2, 3, 4},   {4, 12, 8},  {5, 13, 7},
                                 {8, 24, 16}, {17, 29, 31}, {36, 128, 81}};
  for (const auto& d : dims) {
    const std::size_t M = d[0], N = d[1], K = d[2];
    const auto A = rand_vec(M * K, rng);
    const auto At = [&] {  // K x M
      std::vector<double> t(M * K);
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t k = 0; k < K; ++k) t[k * M + i] = A[i * K + k];
      return t;
    }();
    const auto B = rand_vec(K * N, rng);
    const auto Bt = [&] {  // N x K
      std::vector<double> t(K * N);
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t j = 0; j < N; ++j) t[j * K + k] = B[k * N + j];
      return t;
    }();
    std::vector<double> expect(M * N, 0.0);
    naive_gemm(false, false, A, B, expect, M, N, K);

    for (const kern::Isa isa : {kern::Isa::scalar, kern::Isa::avx2}) {
      if (isa == kern::Isa::avx2 && !kern::cpu_has_avx2()) continue;
      IsaGuard g(isa);
      std::vector<double> C(M * N, 0.0);
      kern::ops().gemm_nn(A.data(), K, B.data(), N, C.data(), N, M, N, K);
      for (std::size_t i = 0; i < M * N; ++i) CHECK(close(C[i], expect[i], 1e-12));

      std::fill(C.begin(), C.end(), 0.0);
      kern::ops().gemm_tn(At.data(), M, B.data(), N, C.data(), N, M, N, K);
      for (std::size_t i = 0; i < M * N; ++i) CHECK(close(C[i], expect[i], 1e-12));

      std::fill(C.begin(), C.end(), 0.0);
      kern::ops().gemm_nt(A.data(), K, Bt.data(), K, C.data(), N, M, N, K);
      for (std::size_t i = 0; i < M * N; ++i) CHECK(close(C[i], expect[i], 1e-12));
    }
  }
}

TEST_CASE("gemm accumulates into C") {
  Rng rng(11);
  const std::size_t M = 5, N = 6, K = 7;
  const auto A = rand_vec(M * K, rng);
  const auto B = rand_vec(K * N, rng);
  std::vector<double> C(M * N, 1.0);
  kern::ops().gemm_nn(A.data(), K, B.data(), N, C.data(), N, M, N, K);
  std::vector<double> expect(M * N, 1.0);
  naive_gemm(false, false, A, B, expect, M, N, K);
  for (std::size_t i = 0; i < M * N; ++i) CHECK(close(C[i], expect[i], 1e-12));
}
