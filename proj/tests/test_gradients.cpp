#include <cmath>
#include <doctest.h>

#include "mmdl/gradcheck.hpp"
#include "mmdl/gradsuite.hpp"
#include "mmdl/ops.hpp"
#include "mmdl/rng.hpp"

using namespace mmdl;

namespace {

Tensor rand_tensor(Rng& rng, Shape shape, double lo = -2, double hi = 2) {
  Tensor t(std::move(shape), 0.0);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("gradcheck: exact quadratic is tight") {
  Rng rng(21);
  Tensor x = rand_tensor(rng, {5});
  const double err =
      finite_diff_gradcheck([](const Tensor& t) { return scalar_mul(sum_all(mul(t, t)), 0.5); }, x, 1e-4);
  REQUIRE(err <= 1e-7);
}

TEST_CASE("gradcheck: gelu sum within 1e-4") {
  Rng rng(22);
  Tensor x = rand_tensor(rng, {4, 3});
  const double err = finite_diff_gradcheck([](const Tensor& t) { return sum_all(gelu(t)); }, x, 1e-4);
  REQUIRE(err <= 1e-4);
}

TEST_CASE("gradcheck: mean of matmul within 1e-5") {
  Rng rng(23);
  Tensor w = rand_tensor(rng, {4, 3});
  w.set_requires_grad(true);
  Tensor x = rand_tensor(rng, {5, 4});
  const double err =
      finite_diff_gradcheck([&](const Tensor& t) { return mean_all(matmul(t, w)); }, x, 1e-4);
  REQUIRE(err <= 1e-5);
}

TEST_CASE("gradcheck: kd loss of softmax pair w.r.t. student logits within 1e-4") {
  Rng rng(24);
  Tensor a = rand_tensor(rng, {6});
  Tensor pa = softmax_lastdim(a);
  std::vector<double> p_t(pa.data().begin(), pa.data().end());
  Tensor b = rand_tensor(rng, {6});
  const double err = finite_diff_gradcheck(
      [&](const Tensor& t) { return kd_loss_taped(softmax_lastdim(t), p_t); }, b, 1e-4);
  REQUIRE(err <= 1e-4);
}

TEST_CASE("gradcheck: h must be positive") {
  Rng rng(25);
  Tensor x = rand_tensor(rng, {3});
  REQUIRE_THROWS_AS(finite_diff_gradcheck([](const Tensor& t) { return sum_all(t); }, x, 0.0), Error);
}

// per-op random-instance sweep (the full 100-instance suite runs in the
// acceptance binary; a lighter pass here keeps the unit suite quick)
TEST_CASE("gradcheck: every op within 1e-4 on random instances") {
  auto entries = run_gradcheck_suite(false, 20);
  for (const auto& e : entries) {
    INFO(e.name << " err " << e.max_rel_err);
    REQUIRE(e.max_rel_err <= e.tolerance);
  }
}
