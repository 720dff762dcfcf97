#pragma once

// Data-parallel arithmetic kernels behind the network layers.
//
// Every kernel has a scalar reference implementation and, on x86-64, an AVX2
// variant. The active backend is chosen once at startup from CPUID (override
// with set_backend() or the RISKSEQ_KERNELS env var) and stays fixed for the
// process, so a run is always served by one backend end to end.
//
// Summation order inside a kernel depends only on the row/column being
// produced, never on the batch size, which is what makes single-row and
// batched scoring bit-identical within a backend.
//
// Matrices are row-major. Double-precision overloads (used by the
// gradient-check suite) always run the scalar path.

#include <cstddef>

namespace riskseq::kern {

enum class Backend { scalar, avx2 };

bool avx2_supported();
Backend active_backend();
void set_backend(Backend b);  // throws ValidationError if unsupported
const char* backend_name(Backend b);

// c[m x n] = a[m x k] * b[k x n]; accumulates into c when acc is set.
void matmul_nn(const float* a, const float* b, float* c, int m, int k, int n, bool acc = false);
// c[k x n] = a[m x k]^T * b[m x n]
void matmul_tn(const float* a, const float* b, float* c, int m, int k, int n, bool acc = false);
// c[m x k] = a[m x n] * b[k x n]^T
void matmul_nt(const float* a, const float* b, float* c, int m, int n, int k, bool acc = false);

void axpy(float alpha, const float* x, float* y, std::size_t n);
float dot(const float* x, const float* y, std::size_t n);

// Adam with precomputed bias corrections bc1 = 1-beta1^t, bc2 = 1-beta2^t.
void adam_update(float* param, const float* grad, float* m, float* v, std::size_t n,
                 float lr, float beta1, float beta2, float eps, float bc1, float bc2);

// Scalar double-precision overloads.
void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n, bool acc = false);
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n, bool acc = false);
void matmul_nt(const double* a, const double* b, double* c, int m, int n, int k, bool acc = false);
void axpy(double alpha, const double* x, double* y, std::size_t n);
double dot(const double* x, const double* y, std::size_t n);
void adam_update(double* param, const double* grad, double* m, double* v, std::size_t n,
                 double lr, double beta1, double beta2, double eps, double bc1, double bc2);

// Direct entry points for the equivalence tests; callers normally go through
// the dispatched functions above.
namespace scalar {
void matmul_nn_f32(const float* a, const float* b, float* c, int m, int k, int n, bool acc);
void matmul_tn_f32(const float* a, const float* b, float* c, int m, int k, int n, bool acc);
void matmul_nt_f32(const float* a, const float* b, float* c, int m, int n, int k, bool acc);
void axpy_f32(float alpha, const float* x, float* y, std::size_t n);
float dot_f32(const float* x, const float* y, std::size_t n);
void adam_f32(float* p, const float* g, float* m, float* v, std::size_t n,
              float lr, float b1, float b2, float eps, float bc1, float bc2);
}  // namespace scalar

#if defined(RISKSEQ_BUILD_AVX2)
namespace avx2 {
void matmul_nn_f32(const float* a, const float* b, float* c, int m, int k, int n, bool acc);
void matmul_tn_f32(const float* a, const float* b, float* c, int m, int k, int n, bool acc);
void matmul_nt_f32(const float* a, const float* b, float* c, int m, int n, int k, bool acc);
void axpy_f32(float alpha, const float* x, float* y, std::size_t n);
float dot_f32(const float* x, const float* y, std::size_t n);
void adam_f32(float* p, const float* g, float* m, float* v, std::size_t n,
              float lr, float b1, float b2, float eps, float bc1, float bc2);
}  // namespace avx2
#endif

}  // namespace riskseq::kern
