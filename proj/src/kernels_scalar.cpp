#include "capslab/kernels.hpp"

namespace capslab::kern {
namespace {

void s_add(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void s_sub(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void s_mul(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void s_scale(const double* a, double c, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * c;
}

void s_axpy(double c, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += c * x[i];
}

void s_acc_mul(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] += a[i] * b[i];
}

double s_dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double s_sum(const double* a, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i];
  return acc;
}

double s_sumsq(const double* a, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * a[i];
  return acc;
}

void s_gemm_nn(const double* A, std::size_t lda, const double* B, std::size_t ldb,
               double* C, std::size_t ldc, std::size_t M, std::size_t N, std::size_t K) {
  for (std::size_t i = 0; i < M; ++i) {
    double* c = C + i * ldc;
    const double* a = A + i * lda;
    for (std::size_t k = 0; k < K; ++k) {
      const double av = a[k];
      const double* b = B + k * ldb;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

void s_gemm_tn(const double* A, std::size_t lda, const double* B, std::size_t ldb,
               double* C, std::size_t ldc, std::size_t M, std::size_t N, std::size_t K) {
  for (std::size_t k = 0; k < K; ++k) {
    const double* a = A + k * lda;
    const double* b = B + k * ldb;
    for (std::size_t i = 0; i < M; ++i) {
      const double av = a[i];
      double* c = C + i * ldc;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

void s_gemm_nt(const double* A, std::size_t lda, const double* B, std::size_t ldb,
               double* C, std::size_t ldc, std::size_t M, std::size_t N, std::size_t K) {
  for (std::size_t i = 0; i < M; ++i) {
    const double* a = A + i * lda;
    double* c = C + i * ldc;
    for (std::size_t j = 0; j < N; ++j) {
      const double* b = B + j * ldb;
      double acc = 0.0;
      for (std::size_t k = 0; k < K; ++k) acc += a[k] * b[k];
      c[j] += acc;
    }
  }
}

}  // namespace

const Ops& scalar_ops() {
  static const Ops table = {
      s_add, s_sub, s_mul, s_scale, s_axpy, s_acc_mul,
      s_dot, s_sum, s_sumsq,
      s_gemm_nn, s_gemm_tn, s_gemm_nt,
  };
  return table;
}

}  // namespace capslab::kern
