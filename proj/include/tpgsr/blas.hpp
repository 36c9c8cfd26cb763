#pragma once
// GEMM entry point. All heavy math lowers to cblas_{s,d}gemm.
//
// OpenBLAS 0.3.x DYNAMIC_ARCH misdetects some virtualized CPUs and silently
// falls back to its slowest kernel set (~2.5x slower GEMM here). The kernel
// choice is frozen when the shared library loads — before main(), so an
// in-process setenv cannot fix it. When the CPU advertises the AVX-512
// subsets the SKYLAKEX kernels need and the user hasn't chosen a core type,
// a pre-main constructor sets OPENBLAS_CORETYPE and re-execs the binary once
// so the loader sees it; child processes inherit the variable and start fast.
// BLAS-internal threading is disabled; batching/threading happens above GEMM.

#include <cblas.h>

#include <mutex>

#if defined(__linux__)
#include <unistd.h>
#endif

#include "tpgsr/base.hpp"

namespace tpgsr {

#if defined(__linux__) && defined(__x86_64__) && defined(__GNUC__)
namespace detail {
__attribute__((constructor)) inline void blas_coretype_boot(int argc,
                                                            char** argv) {
  if (std::getenv("OPENBLAS_CORETYPE")) return;  // also the re-exec guard
  if (!(__builtin_cpu_supports("avx512f") &&
        __builtin_cpu_supports("avx512bw") &&
        __builtin_cpu_supports("avx512vl")))
    return;
  setenv("OPENBLAS_CORETYPE", "SKYLAKEX", 0);
  if (argc < 1 || !argv || !argv[0]) return;
  execv("/proc/self/exe", argv);
  execv(argv[0], argv);  // fall back; on failure continue on slow kernels
}
}  // namespace detail
#endif

inline void blas_init() {
  static std::once_flag once;
  std::call_once(once, [] {
#if defined(__x86_64__) && defined(__GNUC__)
    if (!std::getenv("OPENBLAS_CORETYPE") &&
        __builtin_cpu_supports("avx512f") &&
        __builtin_cpu_supports("avx512bw") &&
        __builtin_cpu_supports("avx512vl")) {
      setenv("OPENBLAS_CORETYPE", "SKYLAKEX", 0);
    }
#endif
    openblas_set_num_threads(1);
  });
}

// Row-major C[M,N] = alpha * op(A) * op(B) + beta * C
inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
                 const float* a, int lda, const float* b, int ldb, float beta,
                 float* c, int ldc) {
  blas_init();
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
              ldb, beta, c, ldc);
}

inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
                 const double* a, int lda, const double* b, int ldb,
                 double beta, double* c, int ldc) {
  blas_init();
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
              ldb, beta, c, ldc);
}

}  // namespace tpgsr
