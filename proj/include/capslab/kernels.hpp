#pragma once

#include <cstddef>

// Dense f64 kernels behind the tensor engine. Every entry point has a
// scalar reference implementation and, on x86 machines with AVX2+FMA, a
// vectorized variant selected once at startup. kern::ops() returns the
// active table; tests pin a lane with force_isa() and compare lanes
// against each other.
namespace capslab::kern {

enum class Isa { scalar, avx2 };

struct Ops {
  // elementwise over contiguous buffers
  void (*add)(const double* a, const double* b, double* out, std::size_t n);
  void (*sub)(const double* a, const double* b, double* out, std::size_t n);
  void (*mul)(const double* a, const double* b, double* out, std::size_t n);
  void (*scale)(const double* a, double c, double* out, std::size_t n);
  void (*axpy)(double c, const double* x, double* y, std::size_t n);        // y += c*x
  void (*acc_mul)(const double* a, const double* b, double* out, std::size_t n);  // out += a*b

  // reductions
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*sum)(const double* a, std::size_t n);
  double (*sumsq)(const double* a, std::size_t n);

  // row-major GEMM, all accumulate into C (caller zeroes when needed)
  // nn: C[M,N] += A[M,K]   * B[K,N]
  // tn: C[M,N] += A[K,M]^T * B[K,N]
  // nt: C[M,N] += A[M,K]   * B[N,K]^T
  void (*gemm_nn)(const double* A, std::size_t lda, const double* B, std::size_t ldb,
                  double* C, std::size_t ldc, std::size_t M, std::size_t N, std::size_t K);
  void (*gemm_tn)(const double* A, std::size_t lda, const double* B, std::size_t ldb,
                  double* C, std::size_t ldc, std::size_t M, std::size_t N, std::size_t K);
  void (*gemm_nt)(const double* A, std::size_t lda, const double* B, std::size_t ldb,
                  double* C, std::size_t ldc, std::size_t M, std::size_t N, std::size_t K);
};

const Ops& scalar_ops();

bool cpu_has_avx2();

// Active lane. Default: AVX2 when compiled in and the CPU supports it,
// scalar otherwise. CAPSLAB_KERNELS=scalar|avx2 overrides at startup.
const Ops& ops();
Isa active_isa();
void force_isa(Isa isa);

}  // namespace capslab::kern
