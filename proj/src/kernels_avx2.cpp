// AVX2+FMA kernel backend. Compiled with -mavx2 -mfma in its own TU; the
// dispatcher only hands these out when the CPU reports support.

#if defined(__x86_64__) || defined(__i386__)

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "xbld/kernels.hpp"

namespace xbld::kern {
namespace {

constexpr int MR = 6;
constexpr int NR = 8;
constexpr int KC = 256;
constexpr int MC = 96;
constexpr int NC = 2048;

inline double elem(const double* a, int lda, Trans t, int i, int l) {
  return t == Trans::no ? a[static_cast<size_t>(i) * lda + l]
                        : a[static_cast<size_t>(l) * lda + i];
}

// Panel of op(A): mc x kc, stored k-major in MR-row strips, zero padded.
void pack_a(const double* a, int lda, Trans ta, int i0, int mc, int l0, int kc,
            double* ap) {
  for (int ir = 0; ir < mc; ir += MR) {
    const int mr = std::min(MR, mc - ir);
    double* dst = ap + static_cast<size_t>(ir) * kc;
    for (int l = 0; l < kc; ++l) {
      for (int i = 0; i < mr; ++i)
        dst[l * MR + i] = elem(a, lda, ta, i0 + ir + i, l0 + l);
      for (int i = mr; i < MR; ++i) dst[l * MR + i] = 0.0;
    }
  }
}

// Panel of op(B): kc x nc, stored k-major in NR-column strips, zero padded.
void pack_b(const double* b, int ldb, Trans tb, int l0, int kc, int j0, int nc,
            double* bp) {
  for (int jr = 0; jr < nc; jr += NR) {
    const int nr = std::min(NR, nc - jr);
    double* dst = bp + static_cast<size_t>(jr) * kc;
    for (int l = 0; l < kc; ++l) {
      for (int j = 0; j < nr; ++j)
        dst[l * NR + j] = elem(b, ldb, tb, l0 + l, j0 + jr + j);  // op(B)[l,j]
      for (int j = nr; j < NR; ++j) dst[l * NR + j] = 0.0;
    }
  }
}

// 6x8 FMA microkernel; writes the full zero-padded tile.
void micro_6x8(int kc, const double* ap, const double* bp, double* tile) {
  __m256d c[MR][2];
  for (int i = 0; i < MR; ++i) {
    c[i][0] = _mm256_setzero_pd();
    c[i][1] = _mm256_setzero_pd();
  }
  for (int l = 0; l < kc; ++l) {
    const __m256d b0 = _mm256_loadu_pd(bp + l * NR);
    const __m256d b1 = _mm256_loadu_pd(bp + l * NR + 4);
    const double* al = ap + l * MR;
    for (int i = 0; i < MR; ++i) {
      const __m256d ai = _mm256_broadcast_sd(al + i);
      c[i][0] = _mm256_fmadd_pd(ai, b0, c[i][0]);
      c[i][1] = _mm256_fmadd_pd(ai, b1, c[i][1]);
    }
  }
  for (int i = 0; i < MR; ++i) {
    _mm256_storeu_pd(tile + i * NR, c[i][0]);
    _mm256_storeu_pd(tile + i * NR + 4, c[i][1]);
  }
}

void gemm_avx2(Trans ta, Trans tb, int m, int n, int k, const double* a,
               int lda, const double* b, int ldb, double* c, int ldc,
               bool accumulate) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate)
      for (int i = 0; i < m; ++i)
        std::memset(c + static_cast<size_t>(i) * ldc, 0, sizeof(double) * static_cast<size_t>(n));
    return;
  }
  thread_local std::vector<double> apbuf, bpbuf;
  apbuf.resize(static_cast<size_t>(MC + MR) * KC);
  bpbuf.resize(static_cast<size_t>(KC) * (NC + NR));

  double tile[MR * NR];
  for (int jc = 0; jc < n; jc += NC) {
    const int nc = std::min(NC, n - jc);
    for (int pc = 0; pc < k; pc += KC) {
      const int kc = std::min(KC, k - pc);
      const bool first_k = pc == 0;
      pack_b(b, ldb, tb, pc, kc, jc, nc, bpbuf.data());
      for (int ic = 0; ic < m; ic += MC) {
        const int mc = std::min(MC, m - ic);
        pack_a(a, lda, ta, ic, mc, pc, kc, apbuf.data());
        for (int jr = 0; jr < nc; jr += NR) {
          const int nr = std::min(NR, nc - jr);
          const double* bp = bpbuf.data() + static_cast<size_t>(jr) * kc;
          for (int ir = 0; ir < mc; ir += MR) {
            const int mr = std::min(MR, mc - ir);
            micro_6x8(kc, apbuf.data() + static_cast<size_t>(ir) * kc, bp, tile);
            double* cblk = c + static_cast<size_t>(ic + ir) * ldc + jc + jr;
            if (first_k && !accumulate) {
              for (int i = 0; i < mr; ++i)
                for (int j = 0; j < nr; ++j)
                  cblk[static_cast<size_t>(i) * ldc + j] = tile[i * NR + j];
            } else {
              for (int i = 0; i < mr; ++i)
                for (int j = 0; j < nr; ++j)
                  cblk[static_cast<size_t>(i) * ldc + j] += tile[i * NR + j];
            }
          }
        }
      }
    }
  }
}

void add_avx2(const double* a, const double* b, double* out, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}
void sub_avx2(const double* a, const double* b, double* out, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}
void mul_avx2(const double* a, const double* b, double* out, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}
void div_avx2(const double* a, const double* b, double* out, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_div_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] / b[i];
}
void scale_avx2(const double* x, double s, double* out, size_t n) {
  const __m256d sv = _mm256_set1_pd(s);
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), sv));
  for (; i < n; ++i) out[i] = x[i] * s;
}
void axpy_avx2(double a, const double* x, double* y, size_t n) {
  const __m256d av = _mm256_set1_pd(a);
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}
void relu_avx2(const double* x, double* out, size_t n) {
  const __m256d z = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_max_pd(_mm256_loadu_pd(x + i), z));
  for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}
void step_mask_avx2(const double* x, double* out, size_t n) {
  const __m256d z = _mm256_setzero_pd();
  const __m256d one = _mm256_set1_pd(1.0);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d gt = _mm256_cmp_pd(_mm256_loadu_pd(x + i), z, _CMP_GT_OQ);
    _mm256_storeu_pd(out + i, _mm256_and_pd(gt, one));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.0 ? 1.0 : 0.0;
}

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double sum_avx2(const double* x, size_t n) {
  __m256d acc = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double s = hsum(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}
double max_avx2(const double* x, size_t n) {
  double s = x[0];
  size_t i = 0;
  if (n >= 4) {
    __m256d acc = _mm256_loadu_pd(x);
    for (i = 4; i + 4 <= n; i += 4) acc = _mm256_max_pd(acc, _mm256_loadu_pd(x + i));
    double lane[4];
    _mm256_storeu_pd(lane, acc);
    s = std::max(std::max(lane[0], lane[1]), std::max(lane[2], lane[3]));
  }
  for (; i < n; ++i) s = std::max(s, x[i]);
  return s;
}
double dot_avx2(const double* a, const double* b, size_t n) {
  __m256d acc = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
  double s = hsum(acc);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void adam_avx2(double* w, const double* g, double* m, double* v, size_t n,
               double lr, double beta1, double beta2, double eps, double bias1,
               double bias2) {
  const __m256d b1 = _mm256_set1_pd(beta1);
  const __m256d b1c = _mm256_set1_pd(1.0 - beta1);
  const __m256d b2 = _mm256_set1_pd(beta2);
  const __m256d b2c = _mm256_set1_pd(1.0 - beta2);
  const __m256d lrv = _mm256_set1_pd(lr);
  const __m256d epsv = _mm256_set1_pd(eps);
  const __m256d ib1 = _mm256_set1_pd(1.0 / bias1);
  const __m256d ib2 = _mm256_set1_pd(1.0 / bias2);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d gi = _mm256_loadu_pd(g + i);
    __m256d mi = _mm256_loadu_pd(m + i);
    __m256d vi = _mm256_loadu_pd(v + i);
    mi = _mm256_fmadd_pd(b1, mi, _mm256_mul_pd(b1c, gi));
    vi = _mm256_fmadd_pd(b2, vi, _mm256_mul_pd(b2c, _mm256_mul_pd(gi, gi)));
    _mm256_storeu_pd(m + i, mi);
    _mm256_storeu_pd(v + i, vi);
    const __m256d mh = _mm256_mul_pd(mi, ib1);
    const __m256d vh = _mm256_mul_pd(vi, ib2);
    const __m256d den = _mm256_add_pd(_mm256_sqrt_pd(vh), epsv);
    const __m256d upd = _mm256_div_pd(_mm256_mul_pd(lrv, mh), den);
    _mm256_storeu_pd(w + i, _mm256_sub_pd(_mm256_loadu_pd(w + i), upd));
  }
  for (; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
    const double mh = m[i] / bias1;
    const double vh = v[i] / bias2;
    w[i] -= lr * mh / (std::sqrt(vh) + eps);
  }
}

}  // namespace

const Kernels* avx2_kernels_impl() {
  static const Kernels k = {
      "avx2",     gemm_avx2,  add_avx2,  sub_avx2, mul_avx2,
      div_avx2,   scale_avx2, axpy_avx2, relu_avx2, step_mask_avx2,
      sum_avx2,   max_avx2,   dot_avx2,  adam_avx2,
  };
  return &k;
}

}  // namespace xbld::kern

#else

namespace xbld::kern {
const Kernels* avx2_kernels_impl() { return nullptr; }
}  // namespace xbld::kern

#endif
