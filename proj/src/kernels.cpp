#include "capslab/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace capslab::kern {

#if defined(CAPSLAB_BUILD_AVX2)
const Ops& avx2_ops();
#endif

namespace {

Isa g_isa = []() {
#if defined(CAPSLAB_BUILD_AVX2)
  Isa isa = cpu_has_avx2() ? Isa::avx2 : Isa::scalar;
#else
  Isa isa = Isa::scalar;
#endif
  if (const char* env = std::getenv("CAPSLAB_KERNELS")) {
    if (std::strcmp(env, "scalar") == 0) isa = Isa::scalar;
#if defined(CAPSLAB_BUILD_AVX2)
    if (std::strcmp(env, "avx2") == 0 && cpu_has_avx2()) isa = Isa::avx2;
#endif
  }
  return isa;
}();

}  // namespace

bool cpu_has_avx2() {
#if defined(__GNUC__) && (defined(__x86_64__) || defined(__i386__))
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const Ops& ops() {
#if defined(CAPSLAB_BUILD_AVX2)
  if (g_isa == Isa::avx2) return avx2_ops();
#endif
  return scalar_ops();
}

Isa active_isa() { return g_isa; }

void force_isa(Isa isa) {
#if defined(CAPSLAB_BUILD_AVX2)
  if (isa == Isa::avx2 && !cpu_has_avx2()) return;
#else
  if (isa == Isa::avx2) return;
#endif
  g_isa = isa;
}

}  // namespace capslab::kern
