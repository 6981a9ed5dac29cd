#include "datforge/blas.hpp"

#include <dlfcn.h>

#include <cstdlib>
#include <mutex>
#include <string>

namespace datforge::numerics::blas {
namespace {

// CBLAS constants (values fixed by the CBLAS standard).
constexpr int kRowMajor = 101;
constexpr int kNoTrans = 111;
constexpr int kTrans = 112;

using SgemmFn = void (*)(int, int, int, int, int, int, float, const float*, int, const float*,
                         int, float, float*, int);
using DgemmFn = void (*)(int, int, int, int, int, int, double, const double*, int, const double*,
                         int, double, double*, int);
using SetThreadsFn = void (*)(int);

struct Backend {
  SgemmFn sgemm = nullptr;
  DgemmFn dgemm = nullptr;
  std::string description = "fallback";
};

const char* pick_coretype() {
#if defined(__x86_64__)
  if (__builtin_cpu_supports("avx512f")) return "SKYLAKEX";
  if (__builtin_cpu_supports("avx2")) return "HASWELL";
#endif
  return nullptr;
}

Backend load_backend() {
  Backend b;
  // Must be set before the library constructor performs CPU detection.
  if (const char* core = pick_coretype()) setenv("OPENBLAS_CORETYPE", core, /*overwrite=*/0);
  setenv("OPENBLAS_NUM_THREADS", "1", /*overwrite=*/0);

  void* handle = nullptr;
  for (const char* name : {"libopenblas.so.0", "libopenblas.so"}) {
    handle = dlopen(name, RTLD_NOW | RTLD_LOCAL);
    if (handle) break;
  }
  if (!handle) return b;

  auto sgemm = reinterpret_cast<SgemmFn>(dlsym(handle, "cblas_sgemm"));
  auto dgemm = reinterpret_cast<DgemmFn>(dlsym(handle, "cblas_dgemm"));
  if (!sgemm || !dgemm) return b;

  // Single-threaded for run-to-run bit determinism.
  if (auto set_threads = reinterpret_cast<SetThreadsFn>(dlsym(handle, "openblas_set_num_threads")))
    set_threads(1);

  b.sgemm = sgemm;
  b.dgemm = dgemm;
  const char* core = getenv("OPENBLAS_CORETYPE");
  b.description = std::string("openblas ") + (core ? core : "autodetect");
  return b;
}

const Backend& backend() {
  static const Backend b = load_backend();
  return b;
}

// Reference kernel, used only when no BLAS library is available.
template <typename T>
void gemm_fallback(Transpose ta, Transpose tb, int m, int n, int k, T alpha, const T* a, int lda,
                   const T* b, int ldb, T beta, T* c, int ldc) {
  auto at = [&](int i, int j) { return ta == Transpose::no ? a[i * lda + j] : a[j * lda + i]; };
  auto bt = [&](int i, int j) { return tb == Transpose::no ? b[i * ldb + j] : b[j * ldb + i]; };
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      T acc = 0;
      for (int p = 0; p < k; ++p) acc += at(i, p) * bt(p, j);
      c[i * ldc + j] = alpha * acc + beta * c[i * ldc + j];
    }
  }
}

}  // namespace

void gemm_f32(Transpose ta, Transpose tb, int m, int n, int k, float alpha, const float* a,
              int lda, const float* b, int ldb, float beta, float* c, int ldc) {
  if (m == 0 || n == 0) return;
  const Backend& be = backend();
  if (be.sgemm) {
    be.sgemm(kRowMajor, ta == Transpose::no ? kNoTrans : kTrans,
             tb == Transpose::no ? kNoTrans : kTrans, m, n, k, alpha, a, lda, b, ldb, beta, c,
             ldc);
  } else {
    gemm_fallback(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
  }
}

void gemm_f64(Transpose ta, Transpose tb, int m, int n, int k, double alpha, const double* a,
              int lda, const double* b, int ldb, double beta, double* c, int ldc) {
  if (m == 0 || n == 0) return;
  const Backend& be = backend();
  if (be.dgemm) {
    be.dgemm(kRowMajor, ta == Transpose::no ? kNoTrans : kTrans,
             tb == Transpose::no ? kNoTrans : kTrans, m, n, k, alpha, a, lda, b, ldb, beta, c,
             ldc);
  } else {
    gemm_fallback(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
  }
}

const char* backend_description() { return backend().description.c_str(); }

}  // namespace datforge::numerics::blas
