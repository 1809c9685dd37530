#pragma once

#include <cstddef>

namespace xbld::kern {

enum class Trans { no, yes };

/// Compute kernels behind the tensor ops. Each entry has a scalar reference
/// implementation and, on x86 with AVX2+FMA, a vectorized variant picked at
/// runtime. Set XBLD_KERNELS=scalar|avx2 to force a backend.
struct Kernels {
  const char* name;

  /// C = op(A)*op(B), accumulating into C when `accumulate`. Row-major;
  /// lda/ldb/ldc are leading dimensions of the stored matrices.
  void (*gemm)(Trans ta, Trans tb, int m, int n, int k, const double* a,
               int lda, const double* b, int ldb, double* c, int ldc,
               bool accumulate);

  void (*add)(const double* a, const double* b, double* out, size_t n);
  void (*sub)(const double* a, const double* b, double* out, size_t n);
  void (*mul)(const double* a, const double* b, double* out, size_t n);
  void (*div)(const double* a, const double* b, double* out, size_t n);
  void (*scale)(const double* x, double s, double* out, size_t n);
  void (*axpy)(double a, const double* x, double* y, size_t n);  // y += a*x
  void (*relu)(const double* x, double* out, size_t n);
  void (*step_mask)(const double* x, double* out, size_t n);  // x>0 ? 1 : 0

  double (*sum)(const double* x, size_t n);
  double (*maxval)(const double* x, size_t n);  // n >= 1
  double (*dot)(const double* a, const double* b, size_t n);

  /// Fused Adam update. bias1/bias2 are the 1-beta^t corrections.
  void (*adam_step)(double* w, const double* g, double* m, double* v, size_t n,
                    double lr, double beta1, double beta2, double eps,
                    double bias1, double bias2);
};

const Kernels& scalar_kernels();
/// nullptr when AVX2 support is missing (at build or run time).
const Kernels* avx2_kernels();
/// Backend chosen at first use.
const Kernels& active();

bool cpu_supports_avx2();

}  // namespace xbld::kern
