#include "mmdl/kernels.hpp"

#include <cstring>
#include <vector>

namespace mmdl::kern {

namespace {

// one output row: c[0..N) += sum_k a_row[k] * B[k,:], k unrolled by 4
inline void row_axpy4(const double* a_row, const double* B, double* c, int K, int N) {
  int k = 0;
  for (; k + 4 <= K; k += 4) {
    const double a0 = a_row[k], a1 = a_row[k + 1], a2 = a_row[k + 2], a3 = a_row[k + 3];
    const double* b0 = B + static_cast<std::size_t>(k) * N;
    const double* b1 = b0 + N;
    const double* b2 = b1 + N;
    const double* b3 = b2 + N;
    for (int j = 0; j < N; ++j) c[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
  }
  for (; k < K; ++k) {
    const double a0 = a_row[k];
    const double* b0 = B + static_cast<std::size_t>(k) * N;
    for (int j = 0; j < N; ++j) c[j] += a0 * b0[j];
  }
}

}  // namespace

void mm_acc(const double* A, const double* B, double* C, int M, int K, int N) {
  for (int i = 0; i < M; ++i)
    row_axpy4(A + static_cast<std::size_t>(i) * K, B, C + static_cast<std::size_t>(i) * N, K, N);
}

void mm(const double* A, const double* B, double* C, int M, int K, int N) {
  std::memset(C, 0, sizeof(double) * static_cast<std::size_t>(M) * N);
  mm_acc(A, B, C, M, K, N);
}

namespace {

// scratch for transposed operands; reused across calls on each thread
thread_local std::vector<double> g_transpose_buf;

void transpose_into(const double* src, int rows, int cols, std::vector<double>& dst) {
  dst.resize(static_cast<std::size_t>(rows) * cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      dst[static_cast<std::size_t>(j) * rows + i] = src[static_cast<std::size_t>(i) * cols + j];
}

}  // namespace

void mm_bt_acc(const double* dY, const double* B, double* C, int M, int N, int K) {
  // dot-product reductions vectorize poorly; go through B^T and the axpy path
  transpose_into(B, K, N, g_transpose_buf);
  for (int i = 0; i < M; ++i)
    row_axpy4(dY + static_cast<std::size_t>(i) * N, g_transpose_buf.data(),
              C + static_cast<std::size_t>(i) * K, N, K);
}

void mm_at_acc(const double* A, const double* dY, double* C, int M, int K, int N) {
  transpose_into(A, M, K, g_transpose_buf);
  for (int k = 0; k < K; ++k)
    row_axpy4(g_transpose_buf.data() + static_cast<std::size_t>(k) * M, dY,
              C + static_cast<std::size_t>(k) * N, M, N);
}

void axpy(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

double dot(const double* x, const double* y, std::size_t n) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += x[i] * y[i];
    s1 += x[i + 1] * y[i + 1];
    s2 += x[i + 2] * y[i + 2];
    s3 += x[i + 3] * y[i + 3];
  }
  double s = (s0 + s1) + (s2 + s3);
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

}  // namespace mmdl::kern
