#include "xbld/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

// Reference kernels. Plain loops, no intrinsics; the AVX2 backend is
// equivalence-tested against these.

namespace xbld::kern {
namespace {

inline const double* row(const double* a, int lda, int i) { return a + static_cast<size_t>(i) * lda; }

void gemm_scalar(Trans ta, Trans tb, int m, int n, int k, const double* a,
                 int lda, const double* b, int ldb, double* c, int ldc,
                 bool accumulate) {
  if (!accumulate) {
    for (int i = 0; i < m; ++i) std::memset(c + static_cast<size_t>(i) * ldc, 0, sizeof(double) * static_cast<size_t>(n));
  }
  if (ta == Trans::no && tb == Trans::no) {
    // C[i,j] += A[i,l] * B[l,j]; inner loop contiguous over j.
    for (int i = 0; i < m; ++i) {
      double* ci = c + static_cast<size_t>(i) * ldc;
      for (int l = 0; l < k; ++l) {
        const double ail = row(a, lda, i)[l];
        if (ail == 0.0) continue;
        const double* bl = row(b, ldb, l);
        for (int j = 0; j < n; ++j) ci[j] += ail * bl[j];
      }
    }
  } else if (ta == Trans::no && tb == Trans::yes) {
    // C[i,j] += A[i,l] * B[j,l]; dot of two contiguous rows.
    for (int i = 0; i < m; ++i) {
      const double* ai = row(a, lda, i);
      double* ci = c + static_cast<size_t>(i) * ldc;
      for (int j = 0; j < n; ++j) {
        const double* bj = row(b, ldb, j);
        double acc = 0.0;
        for (int l = 0; l < k; ++l) acc += ai[l] * bj[l];
        ci[j] += acc;
      }
    }
  } else if (ta == Trans::yes && tb == Trans::no) {
    // C[i,j] += A[l,i] * B[l,j]
    for (int l = 0; l < k; ++l) {
      const double* al = row(a, lda, l);
      const double* bl = row(b, ldb, l);
      for (int i = 0; i < m; ++i) {
        const double ali = al[i];
        if (ali == 0.0) continue;
        double* ci = c + static_cast<size_t>(i) * ldc;
        for (int j = 0; j < n; ++j) ci[j] += ali * bl[j];
      }
    }
  } else {
    // C[i,j] += A[l,i] * B[j,l]
    for (int i = 0; i < m; ++i) {
      double* ci = c + static_cast<size_t>(i) * ldc;
      for (int j = 0; j < n; ++j) {
        const double* bj = row(b, ldb, j);
        double acc = 0.0;
        for (int l = 0; l < k; ++l) acc += row(a, lda, l)[i] * bj[l];
        ci[j] += acc;
      }
    }
  }
}

void add_scalar(const double* a, const double* b, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}
void sub_scalar(const double* a, const double* b, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}
void mul_scalar(const double* a, const double* b, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}
void div_scalar(const double* a, const double* b, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] / b[i];
}
void scale_scalar(const double* x, double s, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = x[i] * s;
}
void axpy_scalar(double a, const double* x, double* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] += a * x[i];
}
void relu_scalar(const double* x, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}
void step_mask_scalar(const double* x, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? 1.0 : 0.0;
}
double sum_scalar(const double* x, size_t n) {
  double s = 0.0;
  for (size_t i = 0; i < n; ++i) s += x[i];
  return s;
}
double max_scalar(const double* x, size_t n) {
  double s = x[0];
  for (size_t i = 1; i < n; ++i) s = std::max(s, x[i]);
  return s;
}
double dot_scalar(const double* a, const double* b, size_t n) {
  double s = 0.0;
  for (size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void adam_scalar(double* w, const double* g, double* m, double* v, size_t n,
                 double lr, double beta1, double beta2, double eps,
                 double bias1, double bias2) {
  for (size_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
    const double mh = m[i] / bias1;
    const double vh = v[i] / bias2;
    w[i] -= lr * mh / (std::sqrt(vh) + eps);
  }
}

}  // namespace

const Kernels& scalar_kernels() {
  static const Kernels k = {
      "scalar",     gemm_scalar, add_scalar,  sub_scalar, mul_scalar,
      div_scalar,   scale_scalar, axpy_scalar, relu_scalar, step_mask_scalar,
      sum_scalar,   max_scalar,  dot_scalar,  adam_scalar,
  };
  return k;
}

}  // namespace xbld::kern
