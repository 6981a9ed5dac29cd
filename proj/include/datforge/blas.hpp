// Row-major GEMM used by conv2d and linear.
//
// OpenBLAS is loaded at runtime rather than linked: its CPU autodetection runs
// in the library constructor, which on containerized hosts with a masked CPUID
// model string falls back to generic SSE kernels. Loading via dlopen lets us
// pin OPENBLAS_CORETYPE from the actual CPU capabilities before the detection
// runs. Falls back to a plain loop kernel when no BLAS library is found.
#pragma once

#include <cstdint>

namespace datforge::numerics::blas {

enum class Transpose { no, yes };

// c[m x n] = alpha * op(a) * op(b) + beta * c, all row-major.
void gemm_f32(Transpose ta, Transpose tb, int m, int n, int k, float alpha, const float* a,
              int lda, const float* b, int ldb, float beta, float* c, int ldc);
void gemm_f64(Transpose ta, Transpose tb, int m, int n, int k, double alpha, const double* a,
              int lda, const double* b, int ldb, double beta, double* c, int ldc);

template <typename T>
void gemm(Transpose ta, Transpose tb, int m, int n, int k, T alpha, const T* a, int lda,
          const T* b, int ldb, T beta, T* c, int ldc) {
  if constexpr (sizeof(T) == sizeof(float)) {
    gemm_f32(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
  } else {
    gemm_f64(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
  }
}

// "openblas <coretype>" or "fallback"; for diagnostics only.
const char* backend_description();

}  // namespace datforge::numerics::blas
