#include "mmdl/rng.hpp"

#include <cmath>

namespace mmdl {

std::uint64_t Rng::uniform_int(std::uint64_t n) {
  // rejection sampling on the top bits; unbiased for any n
  std::uint64_t threshold = (0 - n) % n;
  for (;;) {
    std::uint64_t r = bits();
    if (r >= threshold) return r % n;
  }
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = 1.0 - uniform();  // (0, 1]
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 6.283185307179586476925286766559 * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

double Rng::trunc_normal(double sigma) {
  for (;;) {
    double z = normal();
    if (z >= -2.0 && z <= 2.0) return sigma * z;
  }
}

double Rng::gamma(double alpha) {
  if (alpha < 1.0) {
    double u = 1.0 - uniform();  // avoid pow(0, ...)
    return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
  }
  double d = alpha - 1.0 / 3.0;
  double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = normal();
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    double u = 1.0 - uniform();
    if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
  }
}

std::vector<double> Rng::dirichlet(double alpha, int k) {
  std::vector<double> out(static_cast<std::size_t>(k));
  double sum = 0.0;
  for (auto& g : out) {
    g = gamma(alpha);
    sum += g;
  }
  if (sum <= 0.0) sum = 1.0;
  for (auto& g : out) g /= sum;
  return out;
}

}  // namespace mmdl
