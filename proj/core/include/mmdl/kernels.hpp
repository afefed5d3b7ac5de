#pragma once

#include <cstddef>

namespace mmdl::kern {

// Row-major f64 matrix kernels. All sizes are element counts, no strides.
// These carry the training hot path; shapes here are tiny (d_model-scale),
// so each kernel keeps the inner loop contiguous and lets the compiler
// vectorize.

// C[M,N] = A[M,K] * B[K,N]
void mm(const double* A, const double* B, double* C, int M, int K, int N);

// C[M,N] += A[M,K] * B[K,N]
void mm_acc(const double* A, const double* B, double* C, int M, int K, int N);

// C[M,K] += dY[M,N] * B[K,N]^T   (dot-product form; B given row-major [K,N])
void mm_bt_acc(const double* dY, const double* B, double* C, int M, int N, int K);

// C[K,N] += A[M,K]^T * dY[M,N]   (outer-product form; A given row-major [M,K])
void mm_at_acc(const double* A, const double* dY, double* C, int M, int K, int N);

// y += a * x over n elements
void axpy(double a, const double* x, double* y, std::size_t n);

double dot(const double* x, const double* y, std::size_t n);

}  // namespace mmdl::kern
