#pragma once

// Templated scalar loops shared by the float scalar backend and the
// double-precision overloads. Inner loops accumulate over the contraction
// axis in ascending order; the AVX2 variants keep the same per-element
// traversal so results stay batch-size independent in both backends.

#include <cmath>
#include <cstddef>

namespace riskseq::kern::detail {

template <typename T>
void matmul_nn_impl(const T* a, const T* b, T* c, int m, int k, int n, bool acc) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::size_t>(i) * n;
    if (!acc) {
      for (int j = 0; j < n; ++j) crow[j] = T(0);
    }
    const T* arow = a + static_cast<std::size_t>(i) * k;
    for (int t = 0; t < k; ++t) {
      const T av = arow[t];
      const T* brow = b + static_cast<std::size_t>(t) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void matmul_tn_impl(const T* a, const T* b, T* c, int m, int k, int n, bool acc) {
  if (!acc) {
    for (std::size_t idx = 0; idx < static_cast<std::size_t>(k) * n; ++idx) c[idx] = T(0);
  }
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<std::size_t>(i) * k;
    const T* brow = b + static_cast<std::size_t>(i) * n;
    for (int t = 0; t < k; ++t) {
      const T av = arow[t];
      T* crow = c + static_cast<std::size_t>(t) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void matmul_nt_impl(const T* a, const T* b, T* c, int m, int n, int k, bool acc) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<std::size_t>(i) * n;
    T* crow = c + static_cast<std::size_t>(i) * k;
    for (int r = 0; r < k; ++r) {
      const T* brow = b + static_cast<std::size_t>(r) * n;
      T sum(0);
      for (int j = 0; j < n; ++j) sum += arow[j] * brow[j];
      crow[r] = acc ? crow[r] + sum : sum;
    }
  }
}

template <typename T>
void axpy_impl(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
T dot_impl(const T* x, const T* y, std::size_t n) {
  T sum(0);
  for (std::size_t i = 0; i < n; ++i) sum += x[i] * y[i];
  return sum;
}

template <typename T>
void adam_impl(T* p, const T* g, T* m, T* v, std::size_t n,
               T lr, T b1, T b2, T eps, T bc1, T bc2) {
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = b1 * m[i] + (T(1) - b1) * g[i];
    v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
    const T mhat = m[i] / bc1;
    const T vhat = v[i] / bc2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

}  // namespace riskseq::kern::detail
