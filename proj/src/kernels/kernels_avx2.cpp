// AVX2/FMA kernel variants. Compiled with -mavx2 -mfma; only reached after a
// runtime CPUID check in the dispatcher.

#include <immintrin.h>

#include <cmath>
#include <cstddef>

#include "riskseq/kernels.hpp"

namespace riskseq::kern::avx2 {

namespace {

inline float hsum8(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 sh = _mm_movehl_ps(lo, lo);
  lo = _mm_add_ps(lo, sh);
  sh = _mm_shuffle_ps(lo, lo, 0x1);
  lo = _mm_add_ss(lo, sh);
  return _mm_cvtss_f32(lo);
}

}  // namespace

void matmul_nn_f32(const float* a, const float* b, float* c, int m, int k, int n, bool acc) {
  for (int i = 0; i < m; ++i) {
    float* crow = c + static_cast<std::size_t>(i) * n;
    const float* arow = a + static_cast<std::size_t>(i) * k;
    int j = 0;
    for (; j + 8 <= n; j += 8) {
      __m256 sum = acc ? _mm256_loadu_ps(crow + j) : _mm256_setzero_ps();
      for (int t = 0; t < k; ++t) {
        const __m256 av = _mm256_set1_ps(arow[t]);
        const __m256 bv = _mm256_loadu_ps(b + static_cast<std::size_t>(t) * n + j);
        sum = _mm256_fmadd_ps(av, bv, sum);
      }
      _mm256_storeu_ps(crow + j, sum);
    }
    for (; j < n; ++j) {
      float sum = acc ? crow[j] : 0.0f;
      for (int t = 0; t < k; ++t)
        sum = std::fma(arow[t], b[static_cast<std::size_t>(t) * n + j], sum);
      crow[j] = sum;
    }
  }
}

void matmul_tn_f32(const float* a, const float* b, float* c, int m, int k, int n, bool acc) {
  if (!acc) {
    const std::size_t total = static_cast<std::size_t>(k) * n;
    std::size_t idx = 0;
    const __m256 zero = _mm256_setzero_ps();
    for (; idx + 8 <= total; idx += 8) _mm256_storeu_ps(c + idx, zero);
    for (; idx < total; ++idx) c[idx] = 0.0f;
  }
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<std::size_t>(i) * k;
    const float* brow = b + static_cast<std::size_t>(i) * n;
    for (int t = 0; t < k; ++t) {
      const float av = arow[t];
      float* crow = c + static_cast<std::size_t>(t) * n;
      const __m256 avv = _mm256_set1_ps(av);
      int j = 0;
      for (; j + 8 <= n; j += 8) {
        __m256 cv = _mm256_loadu_ps(crow + j);
        cv = _mm256_fmadd_ps(avv, _mm256_loadu_ps(brow + j), cv);
        _mm256_storeu_ps(crow + j, cv);
      }
      for (; j < n; ++j) crow[j] = std::fma(av, brow[j], crow[j]);
    }
  }
}

void matmul_nt_f32(const float* a, const float* b, float* c, int m, int n, int k, bool acc) {
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<std::size_t>(i) * n;
    float* crow = c + static_cast<std::size_t>(i) * k;
    for (int r = 0; r < k; ++r) {
      const float* brow = b + static_cast<std::size_t>(r) * n;
      __m256 sum = _mm256_setzero_ps();
      int j = 0;
      for (; j + 8 <= n; j += 8)
        sum = _mm256_fmadd_ps(_mm256_loadu_ps(arow + j), _mm256_loadu_ps(brow + j), sum);
      float s = hsum8(sum);
      for (; j < n; ++j) s = std::fma(arow[j], brow[j], s);
      crow[r] = acc ? crow[r] + s : s;
    }
  }
}

void axpy_f32(float alpha, const float* x, float* y, std::size_t n) {
  const __m256 av = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 yv = _mm256_loadu_ps(y + i);
    yv = _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), yv);
    _mm256_storeu_ps(y + i, yv);
  }
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

float dot_f32(const float* x, const float* y, std::size_t n) {
  __m256 sum = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    sum = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), sum);
  float s = hsum8(sum);
  for (; i < n; ++i) s = std::fma(x[i], y[i], s);
  return s;
}

void adam_f32(float* p, const float* g, float* m, float* v, std::size_t n,
              float lr, float b1, float b2, float eps, float bc1, float bc2) {
  const __m256 b1v = _mm256_set1_ps(b1);
  const __m256 b2v = _mm256_set1_ps(b2);
  const __m256 ob1 = _mm256_set1_ps(1.0f - b1);
  const __m256 ob2 = _mm256_set1_ps(1.0f - b2);
  const __m256 lrv = _mm256_set1_ps(lr);
  const __m256 epsv = _mm256_set1_ps(eps);
  const __m256 ibc1 = _mm256_set1_ps(1.0f / bc1);
  const __m256 ibc2 = _mm256_set1_ps(1.0f / bc2);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 gv = _mm256_loadu_ps(g + i);
    __m256 mv = _mm256_loadu_ps(m + i);
    __m256 vv = _mm256_loadu_ps(v + i);
    mv = _mm256_fmadd_ps(b1v, mv, _mm256_mul_ps(ob1, gv));
    vv = _mm256_fmadd_ps(b2v, vv, _mm256_mul_ps(ob2, _mm256_mul_ps(gv, gv)));
    _mm256_storeu_ps(m + i, mv);
    _mm256_storeu_ps(v + i, vv);
    const __m256 mhat = _mm256_mul_ps(mv, ibc1);
    const __m256 vhat = _mm256_mul_ps(vv, ibc2);
    const __m256 denom = _mm256_add_ps(_mm256_sqrt_ps(vhat), epsv);
    __m256 pv = _mm256_loadu_ps(p + i);
    pv = _mm256_sub_ps(pv, _mm256_div_ps(_mm256_mul_ps(lrv, mhat), denom));
    _mm256_storeu_ps(p + i, pv);
  }
  for (; i < n; ++i) {
    m[i] = b1 * m[i] + (1.0f - b1) * g[i];
    v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
    const float mhat = m[i] * (1.0f / bc1);
    const float vhat = v[i] * (1.0f / bc2);
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

}  // namespace riskseq::kern::avx2
