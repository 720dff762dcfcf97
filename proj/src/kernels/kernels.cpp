#include "riskseq/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <string>

#include "riskseq/common.hpp"
#include "scalar_impl.hpp"

namespace riskseq::kern {

namespace scalar {

void matmul_nn_f32(const float* a, const float* b, float* c, int m, int k, int n, bool acc) {
  detail::matmul_nn_impl(a, b, c, m, k, n, acc);
}
void matmul_tn_f32(const float* a, const float* b, float* c, int m, int k, int n, bool acc) {
  detail::matmul_tn_impl(a, b, c, m, k, n, acc);
}
void matmul_nt_f32(const float* a, const float* b, float* c, int m, int n, int k, bool acc) {
  detail::matmul_nt_impl(a, b, c, m, n, k, acc);
}
void axpy_f32(float alpha, const float* x, float* y, std::size_t n) {
  detail::axpy_impl(alpha, x, y, n);
}
float dot_f32(const float* x, const float* y, std::size_t n) {
  return detail::dot_impl(x, y, n);
}
void adam_f32(float* p, const float* g, float* m, float* v, std::size_t n,
              float lr, float b1, float b2, float eps, float bc1, float bc2) {
  detail::adam_impl(p, g, m, v, n, lr, b1, b2, eps, bc1, bc2);
}

}  // namespace scalar

bool avx2_supported() {
#if defined(RISKSEQ_BUILD_AVX2) && (defined(__x86_64__) || defined(__i386__))
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

namespace {

Backend pick_default_backend() {
  if (const char* env = std::getenv("RISKSEQ_KERNELS")) {
    const std::string v(env);
    if (v == "scalar") return Backend::scalar;
    if (v == "avx2" && avx2_supported()) return Backend::avx2;
  }
  return avx2_supported() ? Backend::avx2 : Backend::scalar;
}

Backend g_backend = pick_default_backend();

}  // namespace

Backend active_backend() { return g_backend; }

void set_backend(Backend b) {
  if (b == Backend::avx2 && !avx2_supported())
    throw ValidationError("kernels: avx2 backend requested but not supported on this CPU");
  g_backend = b;
}

const char* backend_name(Backend b) {
  return b == Backend::avx2 ? "avx2" : "scalar";
}

void matmul_nn(const float* a, const float* b, float* c, int m, int k, int n, bool acc) {
#if defined(RISKSEQ_BUILD_AVX2)
  if (g_backend == Backend::avx2) return avx2::matmul_nn_f32(a, b, c, m, k, n, acc);
#endif
  scalar::matmul_nn_f32(a, b, c, m, k, n, acc);
}

void matmul_tn(const float* a, const float* b, float* c, int m, int k, int n, bool acc) {
#if defined(RISKSEQ_BUILD_AVX2)
  if (g_backend == Backend::avx2) return avx2::matmul_tn_f32(a, b, c, m, k, n, acc);
#endif
  scalar::matmul_tn_f32(a, b, c, m, k, n, acc);
}

void matmul_nt(const float* a, const float* b, float* c, int m, int n, int k, bool acc) {
#if defined(RISKSEQ_BUILD_AVX2)
  if (g_backend == Backend::avx2) return avx2::matmul_nt_f32(a, b, c, m, n, k, acc);
#endif
  scalar::matmul_nt_f32(a, b, c, m, n, k, acc);
}

void axpy(float alpha, const float* x, float* y, std::size_t n) {
#if defined(RISKSEQ_BUILD_AVX2)
  if (g_backend == Backend::avx2) return avx2::axpy_f32(alpha, x, y, n);
#endif
  scalar::axpy_f32(alpha, x, y, n);
}

float dot(const float* x, const float* y, std::size_t n) {
#if defined(RISKSEQ_BUILD_AVX2)
  if (g_backend == Backend::avx2) return avx2::dot_f32(x, y, n);
#endif
  return scalar::dot_f32(x, y, n);
}

void adam_update(float* param, const float* grad, float* m, float* v, std::size_t n,
                 float lr, float beta1, float beta2, float eps, float bc1, float bc2) {
#if defined(RISKSEQ_BUILD_AVX2)
  if (g_backend == Backend::avx2)
    return avx2::adam_f32(param, grad, m, v, n, lr, beta1, beta2, eps, bc1, bc2);
#endif
  scalar::adam_f32(param, grad, m, v, n, lr, beta1, beta2, eps, bc1, bc2);
}

void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
  detail::matmul_nn_impl(a, b, c, m, k, n, acc);
}
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
  detail::matmul_tn_impl(a, b, c, m, k, n, acc);
}
void matmul_nt(const double* a, const double* b, double* c, int m, int n, int k, bool acc) {
  detail::matmul_nt_impl(a, b, c, m, n, k, acc);
}
void axpy(double alpha, const double* x, double* y, std::size_t n) {
  detail::axpy_impl(alpha, x, y, n);
}
double dot(const double* x, const double* y, std::size_t n) {
  return detail::dot_impl(x, y, n);
}
void adam_update(double* param, const double* grad, double* m, double* v, std::size_t n,
                 double lr, double beta1, double beta2, double eps, double bc1, double bc2) {
  detail::adam_impl(param, grad, m, v, n, lr, beta1, beta2, eps, bc1, bc2);
}

}  // namespace riskseq::kern
