#include "capslab/kernels.hpp"

#if defined(CAPSLAB_BUILD_AVX2)

#include <immintrin.h>

#include <algorithm>

namespace capslab::kern {

const Ops& avx2_ops();

namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d shuf = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, shuf));
}

void v_add(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void v_sub(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

void v_mul(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void v_scale(const double* a, double c, double* out, std::size_t n) {
  const __m256d vc = _mm256_set1_pd(c);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), vc));
  for (; i < n; ++i) out[i] = a[i] * c;
}

void v_axpy(double c, const double* x, double* y, std::size_t n) {
  const __m256d vc = _mm256_set1_pd(c);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(vc, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += c * x[i];
}

void v_acc_mul(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i),
                                              _mm256_loadu_pd(out + i)));
  for (; i < n; ++i) out[i] += a[i] * b[i];
}

double v_dot(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double v_sum(const double* a, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(a + i));
    acc1 = _mm256_add_pd(acc1, _mm256_loadu_pd(a + i + 4));
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i];
  return acc;
}

double v_sumsq(const double* a, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256d x0 = _mm256_loadu_pd(a + i);
    const __m256d x1 = _mm256_loadu_pd(a + i + 4);
    acc0 = _mm256_fmadd_pd(x0, x0, acc0);
    acc1 = _mm256_fmadd_pd(x1, x1, acc1);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * a[i];
  return acc;
}

// 4x12 register tile: 12 accumulators + 3 B vectors + 1 broadcast = 16 ymm.
// astep is the distance between consecutive-k elements of A for one C row,
// arow the distance between rows; covers both the NN and TN walks.
inline void tile_4x12(const double* a0, std::size_t arow, std::size_t astep,
                      const double* B, std::size_t ldb, double* C, std::size_t ldc,
                      std::size_t K) {
  __m256d acc[4][3];
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 3; ++c) acc[r][c] = _mm256_setzero_pd();
  const double* a1 = a0 + arow;
  const double* a2 = a1 + arow;
  const double* a3 = a2 + arow;
  for (std::size_t k = 0; k < K; ++k) {
    const double* b = B + k * ldb;
    const __m256d b0 = _mm256_loadu_pd(b);
    const __m256d b1 = _mm256_loadu_pd(b + 4);
    const __m256d b2 = _mm256_loadu_pd(b + 8);
    const std::size_t off = k * astep;
    __m256d a;
    a = _mm256_set1_pd(a0[off]);
    acc[0][0] = _mm256_fmadd_pd(a, b0, acc[0][0]);
    acc[0][1] = _mm256_fmadd_pd(a, b1, acc[0][1]);
    acc[0][2] = _mm256_fmadd_pd(a, b2, acc[0][2]);
    a = _mm256_set1_pd(a1[off]);
    acc[1][0] = _mm256_fmadd_pd(a, b0, acc[1][0]);
    acc[1][1] = _mm256_fmadd_pd(a, b1, acc[1][1]);
    acc[1][2] = _mm256_fmadd_pd(a, b2, acc[1][2]);
    a = _mm256_set1_pd(a2[off]);
    acc[2][0] = _mm256_fmadd_pd(a, b0, acc[2][0]);
    acc[2][1] = _mm256_fmadd_pd(a, b1, acc[2][1]);
    acc[2][2] = _mm256_fmadd_pd(a, b2, acc[2][2]);
    a = _mm256_set1_pd(a3[off]);
    acc[3][0] = _mm256_fmadd_pd(a, b0, acc[3][0]);
    acc[3][1] = _mm256_fmadd_pd(a, b1, acc[3][1]);
    acc[3][2] = _mm256_fmadd_pd(a, b2, acc[3][2]);
  }
  for (int r = 0; r < 4; ++r) {
    double* c = C + static_cast<std::size_t>(r) * ldc;
    for (int v = 0; v < 3; ++v) {
      const __m256d old = _mm256_loadu_pd(c + 4 * v);
      _mm256_storeu_pd(c + 4 * v, _mm256_add_pd(old, acc[r][v]));
    }
  }
}

inline void tile_4x4(const double* a0, std::size_t arow, std::size_t astep,
                     const double* B, std::size_t ldb, double* C, std::size_t ldc,
                     std::size_t K) {
  __m256d acc[4] = {_mm256_setzero_pd(), _mm256_setzero_pd(), _mm256_setzero_pd(),
                    _mm256_setzero_pd()};
  const double* ar[4] = {a0, a0 + arow, a0 + 2 * arow, a0 + 3 * arow};
  for (std::size_t k = 0; k < K; ++k) {
    const __m256d b = _mm256_loadu_pd(B + k * ldb);
    const std::size_t off = k * astep;
    for (int r = 0; r < 4; ++r)
      acc[r] = _mm256_fmadd_pd(_mm256_set1_pd(ar[r][off]), b, acc[r]);
  }
  for (int r = 0; r < 4; ++r) {
    double* c = C + static_cast<std::size_t>(r) * ldc;
    _mm256_storeu_pd(c, _mm256_add_pd(_mm256_loadu_pd(c), acc[r]));
  }
}

// shared driver: aidx(i, k) describes the element of A multiplying C[i, :] at
// reduction step k as a0 = base + i*arow_i, element = a0[k*astep]. The K loop
// is blocked so the active B panel stays cache-resident across row strips.
inline void gemm_broadcast(const double* A, std::size_t arow, std::size_t astep,
                           const double* B, std::size_t ldb, double* C, std::size_t ldc,
                           std::size_t M, std::size_t N, std::size_t K) {
  constexpr std::size_t kBlock = 384;
  for (std::size_t k0 = 0; k0 < K; k0 += kBlock) {
    const std::size_t kb = std::min(kBlock, K - k0);
    const double* Ab = A + k0 * astep;
    const double* Bb = B + k0 * ldb;
    std::size_t i = 0;
    for (; i + 4 <= M; i += 4) {
      const double* a0 = Ab + i * arow;
      double* crow = C + i * ldc;
      std::size_t j = 0;
      for (; j + 12 <= N; j += 12) tile_4x12(a0, arow, astep, Bb + j, ldb, crow + j, ldc, kb);
      for (; j + 4 <= N; j += 4) tile_4x4(a0, arow, astep, Bb + j, ldb, crow + j, ldc, kb);
      for (; j < N; ++j) {
        for (int r = 0; r < 4; ++r) {
          const double* a = a0 + static_cast<std::size_t>(r) * arow;
          double acc = 0.0;
          for (std::size_t k = 0; k < kb; ++k) acc += a[k * astep] * Bb[k * ldb + j];
          crow[static_cast<std::size_t>(r) * ldc + j] += acc;
        }
      }
    }
    for (; i < M; ++i) {
      const double* a = Ab + i * arow;
      double* c = C + i * ldc;
      for (std::size_t k = 0; k < kb; ++k) v_axpy(a[k * astep], Bb + k * ldb, c, N);
    }
  }
}

void v_gemm_nn(const double* A, std::size_t lda, const double* B, std::size_t ldb,
               double* C, std::size_t ldc, std::size_t M, std::size_t N, std::size_t K) {
  gemm_broadcast(A, lda, 1, B, ldb, C, ldc, M, N, K);
}

void v_gemm_tn(const double* A, std::size_t lda, const double* B, std::size_t ldb,
               double* C, std::size_t ldc, std::size_t M, std::size_t N, std::size_t K) {
  gemm_broadcast(A, 1, lda, B, ldb, C, ldc, M, N, K);
}

void v_gemm_nt(const double* A, std::size_t lda, const double* B, std::size_t ldb,
               double* C, std::size_t ldc, std::size_t M, std::size_t N, std::size_t K) {
  for (std::size_t i = 0; i < M; ++i) {
    const double* a = A + i * lda;
    double* c = C + i * ldc;
    std::size_t j = 0;
    for (; j + 4 <= N; j += 4) {
      __m256d acc[4] = {_mm256_setzero_pd(), _mm256_setzero_pd(), _mm256_setzero_pd(),
                        _mm256_setzero_pd()};
      const double* b0 = B + j * ldb;
      const double* b1 = b0 + ldb;
      const double* b2 = b1 + ldb;
      const double* b3 = b2 + ldb;
      std::size_t k = 0;
      for (; k + 4 <= K; k += 4) {
        const __m256d va = _mm256_loadu_pd(a + k);
        acc[0] = _mm256_fmadd_pd(va, _mm256_loadu_pd(b0 + k), acc[0]);
        acc[1] = _mm256_fmadd_pd(va, _mm256_loadu_pd(b1 + k), acc[1]);
        acc[2] = _mm256_fmadd_pd(va, _mm256_loadu_pd(b2 + k), acc[2]);
        acc[3] = _mm256_fmadd_pd(va, _mm256_loadu_pd(b3 + k), acc[3]);
      }
      double tail[4] = {0, 0, 0, 0};
      for (; k < K; ++k) {
        tail[0] += a[k] * b0[k];
        tail[1] += a[k] * b1[k];
        tail[2] += a[k] * b2[k];
        tail[3] += a[k] * b3[k];
      }
      c[j] += hsum(acc[0]) + tail[0];
      c[j + 1] += hsum(acc[1]) + tail[1];
      c[j + 2] += hsum(acc[2]) + tail[2];
      c[j + 3] += hsum(acc[3]) + tail[3];
    }
    for (; j < N; ++j) c[j] += v_dot(a, B + j * ldb, K);
  }
}

}  // namespace

const Ops& avx2_ops() {
  static const Ops table = {
      v_add, v_sub, v_mul, v_scale, v_axpy, v_acc_mul,
      v_dot, v_sum, v_sumsq,
      v_gemm_nn, v_gemm_tn, v_gemm_nt,
  };
  return table;
}

}  // namespace capslab::kern

#endif  // CAPSLAB_BUILD_AVX2
