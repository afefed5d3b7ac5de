#pragma once

#include <cstddef>

namespace mmdl {

// Elementwise exp/tanh over contiguous arrays. Same accuracy class as libm
// (<= ~4 ulp; unit-tested against std::exp / std::tanh) but written as
// branchless polynomial kernels so the compiler can vectorize them.
void vexp(const double* x, double* out, std::size_t n);
void vtanh(const double* x, double* out, std::size_t n);

double fast_exp(double x);
double fast_tanh(double x);

}  // namespace mmdl
