#include <cmath>
#include <array>
#include <doctest.h>
#include <vector>

#include "mmdl/fastmath.hpp"
#include "mmdl/kernels.hpp"
#include "mmdl/rng.hpp"

using namespace mmdl;

TEST_CASE("vexp matches libm across the working range") {
  Rng rng(42);
  std::vector<double> xs;
  for (int i = 0; i < 20000; ++i) xs.push_back(rng.uniform(-700.0, 700.0));
  for (int i = 0; i < 2000; ++i) xs.push_back(rng.uniform(-2.0, 2.0));
  xs.push_back(0.0);
  xs.push_back(-708.0);
  xs.push_back(708.0);
  std::vector<double> ys(xs.size());
  vexp(xs.data(), ys.data(), xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double ref = std::exp(xs[i]);
    REQUIRE(std::fabs(ys[i] - ref) <= 1e-13 * std::max(ref, 1e-300));
  }
}

TEST_CASE("vtanh matches libm") {
  Rng rng(43);
  std::vector<double> xs;
  for (int i = 0; i < 20000; ++i) xs.push_back(rng.uniform(-30.0, 30.0));
  for (int i = 0; i < 5000; ++i) xs.push_back(rng.uniform(-1.0, 1.0));
  xs.push_back(0.0);
  xs.push_back(1e-12);
  xs.push_back(-25.0);
  xs.push_back(25.0);
  std::vector<double> ys(xs.size());
  vtanh(xs.data(), ys.data(), xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double ref = std::tanh(xs[i]);
    REQUIRE(std::fabs(ys[i] - ref) <= 1e-12);
  }
}

namespace {

void naive_mm(const double* A, const double* B, double* C, int M, int K, int N) {
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < N; ++j) {
      double s = 0;
      for (int k = 0; k < K; ++k) s += A[i * K + k] * B[k * N + j];
      C[i * N + j] = s;
    }
}

}  // namespace

TEST_CASE("matmul kernels agree with the naive triple loop") {
  Rng rng(7);
  const std::vector<std::array<int, 3>> sizes = {{3, 5, 7}, {16, 64, 64}, {1, 1, 1}, {13, 2, 9}, {128, 64, 256}};
  for (auto [M, K, N] : sizes) {
    std::vector<double> A(static_cast<std::size_t>(M) * K), B(static_cast<std::size_t>(K) * N);
    for (auto& v : A) v = rng.uniform(-1, 1);
    for (auto& v : B) v = rng.uniform(-1, 1);
    std::vector<double> C1(static_cast<std::size_t>(M) * N), C2(C1.size());
    kern::mm(A.data(), B.data(), C1.data(), M, K, N);
    naive_mm(A.data(), B.data(), C2.data(), M, K, N);
    for (std::size_t i = 0; i < C1.size(); ++i) REQUIRE(C1[i] == doctest::Approx(C2[i]).epsilon(1e-12));

    // dA = dY * B^T via mm_bt_acc equals naive with transposed B
    std::vector<double> dY(static_cast<std::size_t>(M) * N);
    for (auto& v : dY) v = rng.uniform(-1, 1);
    std::vector<double> dA1(static_cast<std::size_t>(M) * K, 0.0), dA2(dA1.size(), 0.0);
    kern::mm_bt_acc(dY.data(), B.data(), dA1.data(), M, N, K);
    std::vector<double> BT(static_cast<std::size_t>(N) * K);
    for (int k = 0; k < K; ++k)
      for (int j = 0; j < N; ++j) BT[static_cast<std::size_t>(j) * K + k] = B[static_cast<std::size_t>(k) * N + j];
    naive_mm(dY.data(), BT.data(), dA2.data(), M, N, K);
    for (std::size_t i = 0; i < dA1.size(); ++i) REQUIRE(dA1[i] == doctest::Approx(dA2[i]).epsilon(1e-12));

    // dB = A^T * dY via mm_at_acc
    std::vector<double> dB1(static_cast<std::size_t>(K) * N, 0.0), dB2(dB1.size(), 0.0);
    kern::mm_at_acc(A.data(), dY.data(), dB1.data(), M, K, N);
    std::vector<double> AT(static_cast<std::size_t>(K) * M);
    for (int i = 0; i < M; ++i)
      for (int k = 0; k < K; ++k) AT[static_cast<std::size_t>(k) * M + i] = A[static_cast<std::size_t>(i) * K + k];
    naive_mm(AT.data(), dY.data(), dB2.data(), K, M, N);
    for (std::size_t i = 0; i < dB1.size(); ++i) REQUIRE(dB1[i] == doctest::Approx(dB2[i]).epsilon(1e-12));
  }
}

TEST_CASE("rng streams are deterministic and well formed") {
  Rng a(123), b(123);
  for (int i = 0; i < 1000; ++i) REQUIRE(a.bits() == b.bits());

  Rng rng(9);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
  }
  // dirichlet sums to one
  auto d = rng.dirichlet(0.3, 12);
  double sum = 0;
  for (double v : d) {
    REQUIRE(v >= 0.0);
    sum += v;
  }
  REQUIRE(sum == doctest::Approx(1.0).epsilon(1e-12));

  // trunc_normal stays inside 2 sigma
  for (int i = 0; i < 5000; ++i) REQUIRE(std::fabs(rng.trunc_normal(1.0)) <= 2.0);
}
