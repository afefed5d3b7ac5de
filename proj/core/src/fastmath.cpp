#include "mmdl/fastmath.hpp"

#include <bit>
#include <cmath>
#include <cstdint>

namespace mmdl {

namespace {

// Cephes-style expansions (Moshier). exp: x = n*ln2 + r, |r| <= ln2/2,
// e^r via a 2/3 rational; tanh: small-x rational, else 1 - 2/(e^{2x}+1).
constexpr double kLog2E = 1.4426950408889634073599;
constexpr double kLn2Hi = 6.93145751953125e-1;
constexpr double kLn2Lo = 1.42860682030941723212e-6;

constexpr double kExpP0 = 1.26177193074810590878e-4;
constexpr double kExpP1 = 3.02994407707441961300e-2;
constexpr double kExpP2 = 9.99999999999999999910e-1;
constexpr double kExpQ0 = 3.00198505138664455042e-6;
constexpr double kExpQ1 = 2.52448340349684104192e-3;
constexpr double kExpQ2 = 2.27265548208155028766e-1;
constexpr double kExpQ3 = 2.00000000000000000005e0;

constexpr double kTanhP0 = -9.64399179425052238628e-1;
constexpr double kTanhP1 = -9.92877231001918586564e1;
constexpr double kTanhP2 = -1.61468768441708447952e3;
constexpr double kTanhQ0 = 1.12811678491632931402e2;
constexpr double kTanhQ1 = 2.23548839060100448583e3;
constexpr double kTanhQ2 = 4.84406305325125486048e3;

inline double exp_core(double x) {
  if (x > 708.0) x = 708.0;
  if (x < -708.0) x = -708.0;
  double n = std::nearbyint(x * kLog2E);
  double r = x - n * kLn2Hi;
  r -= n * kLn2Lo;
  double z = r * r;
  double p = r * (kExpP2 + z * (kExpP1 + z * kExpP0));
  double q = kExpQ3 + z * (kExpQ2 + z * (kExpQ1 + z * kExpQ0));
  double e = 1.0 + 2.0 * p / (q - p);
  // scale by 2^n through the exponent bits; |n| <= 1022 after the clamp
  auto ni = static_cast<std::int64_t>(n);
  double scale = std::bit_cast<double>(static_cast<std::uint64_t>(ni + 1023) << 52);
  return e * scale;
}

inline double tanh_core(double x) {
  double ax = std::fabs(x);
  double sign = x < 0.0 ? -1.0 : 1.0;
  // large-|x| branch, valid everywhere but cancellation-prone near 0
  double two_ax = ax > 20.0 ? 40.0 : 2.0 * ax;
  double big = 1.0 - 2.0 / (exp_core(two_ax) + 1.0);
  // small-|x| rational, used for |x| < 0.625
  double z = x * x;
  double num = z * (kTanhP2 + z * (kTanhP1 + z * kTanhP0));
  double den = kTanhQ2 + z * (kTanhQ1 + z * (kTanhQ0 + z));
  double small = ax + ax * num / den;
  double t = ax < 0.625 ? small : big;
  return sign * t;
}

}  // namespace

void vexp(const double* x, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = exp_core(x[i]);
}

void vtanh(const double* x, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = tanh_core(x[i]);
}

double fast_exp(double x) { return exp_core(x); }
double fast_tanh(double x) { return tanh_core(x); }

}  // namespace mmdl
