#include <cmath>
#include <doctest.h>

#include "mmdl/ops.hpp"
#include "mmdl/rng.hpp"
#include "mmdl/tape.hpp"

using namespace mmdl;

namespace {

Tensor rand_tensor(Rng& rng, Shape shape, double lo = -2, double hi = 2) {
  Tensor t(std::move(shape), 0.0);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("tensor invariants") {
  Tensor t(Shape{2, 3}, 0.0);
  REQUIRE(t.numel() == 6);
  REQUIRE_THROWS_AS(Tensor(Shape{2, 3}, std::vector<double>(5, 0.0)), Error);
  REQUIRE_THROWS_AS(Tensor(Shape{0, 3}, 0.0), Error);
  REQUIRE(Tensor::scalar(4.0).scalar_value() == 4.0);
  REQUIRE_THROWS_AS(t.scalar_value(), Error);
}

TEST_CASE("matmul examples") {
  // identity case
  Tensor eye(Shape{2, 2}, std::vector<double>{1, 0, 0, 1});
  Tensor b(Shape{2, 2}, std::vector<double>{3, 4, 5, 6});
  Tensor r = matmul(eye, b);
  for (std::size_t i = 0; i < 4; ++i) REQUIRE(r.data()[i] == b.data()[i]);

  // direct hand evaluation: [[1,2],[3,4]] x [[5],[6]] = [[17],[39]]
  Tensor a(Shape{2, 2}, std::vector<double>{1, 2, 3, 4});
  Tensor c(Shape{2, 1}, std::vector<double>{5, 6});
  Tensor p = matmul(a, c);
  REQUIRE(p.at({0, 0}) == 17.0);
  REQUIRE(p.at({1, 0}) == 39.0);

  // zero case
  Tensor z = matmul(Tensor(Shape{3, 4}, 0.0), Tensor(Shape{4, 2}, 0.0));
  for (double v : z.data()) REQUIRE(v == 0.0);

  // dimension error names both shapes
  try {
    matmul(Tensor(Shape{2, 3}, 0.0), Tensor(Shape{2, 2}, 0.0));
    FAIL("expected dimension error");
  } catch (const Error& e) {
    REQUIRE(e.category() == ErrorCategory::dimension);
    REQUIRE(std::string(e.what()).find("[2,3]") != std::string::npos);
    REQUIRE(std::string(e.what()).find("[2,2]") != std::string::npos);
  }
}

TEST_CASE("softmax examples and properties") {
  // symmetry case
  Tensor z(Shape{3}, std::vector<double>{0, 0, 0});
  Tensor p = softmax_lastdim(z);
  for (double v : p.data()) REQUIRE(v == doctest::Approx(1.0 / 3).epsilon(1e-15));

  // scalar oracle exp/sum for [1,2,3]
  Tensor z2(Shape{3}, std::vector<double>{1, 2, 3});
  Tensor p2 = softmax_lastdim(z2);
  const double denom = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  REQUIRE(p2.data()[0] == doctest::Approx(std::exp(1.0) / denom).epsilon(1e-12));
  REQUIRE(p2.data()[0] == doctest::Approx(0.09003057).epsilon(1e-7));
  REQUIRE(p2.data()[1] == doctest::Approx(0.24472847).epsilon(1e-7));
  REQUIRE(p2.data()[2] == doctest::Approx(0.66524096).epsilon(1e-7));

  // shift invariance, unit sums, argmax preservation on random input
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const int c = 2 + static_cast<int>(rng.uniform_int(6));
    Tensor x = rand_tensor(rng, {c}, -5, 5);
    Tensor shifted(Shape{c}, 0.0);
    const double shift = rng.uniform(-3, 3);
    for (int i = 0; i < c; ++i) shifted.data()[i] = x.data()[i] + shift;
    Tensor px = softmax_lastdim(x);
    Tensor ps = softmax_lastdim(shifted);
    double sum = 0;
    std::size_t argmax_in = 0, argmax_out = 0;
    for (int i = 0; i < c; ++i) {
      sum += px.data()[i];
      REQUIRE(px.data()[i] >= 0.0);
      REQUIRE(px.data()[i] == doctest::Approx(ps.data()[i]).epsilon(1e-9));
      if (x.data()[i] > x.data()[argmax_in]) argmax_in = i;
      if (px.data()[i] > px.data()[argmax_out]) argmax_out = i;
    }
    REQUIRE(std::fabs(sum - 1.0) <= 1e-12);
    REQUIRE(argmax_in == argmax_out);
  }

  REQUIRE_THROWS_AS(softmax_lastdim(Tensor(Shape{2}, std::vector<double>{1.0, std::nan("")})), Error);
}

TEST_CASE("layer_norm examples") {
  Tensor gamma(Shape{4}, 1.0);
  Tensor beta(Shape{4}, 0.0);

  // constant slice -> zeros (eps prevents blowup)
  Tensor c(Shape{4}, std::vector<double>{3, 3, 3, 3});
  Tensor out = layer_norm(c, gamma, beta, 1e-5);
  for (double v : out.data()) REQUIRE(std::fabs(v) < 1e-9);

  // hand oracle: x=[1,3] -> mean 2, population std 1 -> [-1, 1]
  Tensor g2(Shape{2}, 1.0);
  Tensor b2(Shape{2}, 0.0);
  Tensor x(Shape{2}, std::vector<double>{1, 3});
  Tensor o2 = layer_norm(x, g2, b2, 1e-12);
  REQUIRE(o2.data()[0] == doctest::Approx(-1.0).epsilon(1e-9));
  REQUIRE(o2.data()[1] == doctest::Approx(1.0).epsilon(1e-9));

  // annihilation: gamma = 0 -> beta broadcast
  Rng rng(3);
  Tensor xr = rand_tensor(rng, {3, 4});
  Tensor g0(Shape{4}, 0.0);
  Tensor br(Shape{4}, std::vector<double>{1, 2, 3, 4});
  Tensor ob = layer_norm(xr, g0, br, 1e-5);
  for (int r = 0; r < 3; ++r)
    for (int j = 0; j < 4; ++j) REQUIRE(ob.at({r, j}) == br.data()[j]);
}

TEST_CASE("backward basics: bilinear form, fan-out, contracts") {
  Rng rng(5);
  Tensor x = rand_tensor(rng, {3, 2});
  Tensor y = rand_tensor(rng, {3, 2});
  x.set_requires_grad(true);

  // d sum(x*y) / dx == y
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = sum_all(mul(x, y));
    tape.backward(loss);
    auto g = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i) REQUIRE(g[i] == doctest::Approx(y.data()[i]).epsilon(1e-15));

    // second backward on the same tape is a contract error
    REQUIRE_THROWS_AS(tape.backward(loss), Error);
  }
  x.zero_grad();

  // fan-out: using x twice doubles the gradient
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = sum_all(add(mul(x, y), mul(x, y)));
    tape.backward(loss);
    auto g = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      REQUIRE(g[i] == doctest::Approx(2.0 * y.data()[i]).epsilon(1e-12));
  }
  x.zero_grad();

  // non-scalar loss is a contract error
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor out = mul(x, y);
    REQUIRE_THROWS_AS(tape.backward(out), Error);
  }
  // loss from another tape is a contract error
  {
    Tape tape1;
    Tensor loss1;
    {
      TapeScope scope(tape1);
      loss1 = sum_all(mul(x, y));
    }
    Tape tape2;
    REQUIRE_THROWS_AS(tape2.backward(loss1), Error);
  }
}

TEST_CASE("tape replay determinism: identical inputs give bit-identical values and grads") {
  auto run_once = [](std::uint64_t seed) {
    Rng rng(seed);
    Tensor x = rand_tensor(rng, {4, 6});
    Tensor w = rand_tensor(rng, {6, 3});
    x.set_requires_grad(true);
    w.set_requires_grad(true);
    Tape tape;
    TapeScope scope(tape);
    Tensor h = gelu(matmul(x, w));
    Tensor p = softmax_lastdim(h);
    Tensor loss = mean_all(mul(p, p));
    tape.backward(loss);
    std::vector<double> out;
    out.push_back(loss.scalar_value());
    for (double v : x.grad()) out.push_back(v);
    for (double v : w.grad()) out.push_back(v);
    return out;
  };
  auto a = run_once(99);
  auto b = run_once(99);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a[i] == b[i]);  // bit identical
}

TEST_CASE("dropout contract") {
  Rng rng(8);
  Tensor x = rand_tensor(rng, {100});
  // p == 0 or eval mode: untouched pass-through
  Rng r1(1);
  Tensor same = dropout(x, 0.0, r1, true);
  REQUIRE(same.storage().get() == x.storage().get());
  Tensor evalmode = dropout(x, 0.5, r1, false);
  REQUIRE(evalmode.storage().get() == x.storage().get());

  // train mode: kept entries scaled by 1/(1-p), zeros elsewhere
  Rng r2(2);
  Tensor dropped = dropout(x, 0.5, r2, true);
  int zeros = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    const double v = dropped.data()[i];
    if (v == 0.0) ++zeros;
    else REQUIRE(v == doctest::Approx(2.0 * x.data()[i]).epsilon(1e-15));
  }
  REQUIRE(zeros > 20);
  REQUIRE(zeros < 80);

  REQUIRE_THROWS_AS(dropout(x, 1.0, r2, true), Error);
}

TEST_CASE("op error paths") {
  Rng rng(11);
  Tensor x = rand_tensor(rng, {3, 4});
  REQUIRE_THROWS_AS(add(x, Tensor(Shape{4, 3}, 0.0)), Error);
  REQUIRE_THROWS_AS(reshape(x, {5, 2}), Error);
  REQUIRE_THROWS_AS(slice(x, 0, 2, 4), Error);
  REQUIRE_THROWS_AS(slice(x, 3, 0, 1), Error);
  REQUIRE_THROWS_AS(concat({x, Tensor(Shape{3, 5}, 0.0)}, 0), Error);
  REQUIRE_THROWS_AS(embedding(x, std::vector<int>{4}), Error);
  try {
    log(Tensor(Shape{2}, std::vector<double>{1.0, -0.5}));
    FAIL("expected numeric error");
  } catch (const Error& e) {
    REQUIRE(e.category() == ErrorCategory::numeric);
  }
}

TEST_CASE("structural ops round values correctly") {
  Rng rng(13);
  Tensor x = rand_tensor(rng, {2, 3, 4});
  Tensor t = transpose(x, 0, 1);
  REQUIRE(t.shape() == Shape{3, 2, 4});
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 4; ++k) REQUIRE(t.at({j, i, k}) == x.at({i, j, k}));

  Tensor back = transpose(t, 0, 1);
  for (std::size_t i = 0; i < static_cast<std::size_t>(x.numel()); ++i)
    REQUIRE(back.data()[i] == x.data()[i]);

  Tensor s = sum_axis(x, 1);
  REQUIRE(s.shape() == Shape{2, 4});
  REQUIRE(s.at({0, 0}) == doctest::Approx(x.at({0, 0, 0}) + x.at({0, 1, 0}) + x.at({0, 2, 0})));

  Tensor m = mean_axis(x, 2);
  REQUIRE(m.shape() == Shape{2, 3});
  double acc = 0;
  for (int k = 0; k < 4; ++k) acc += x.at({1, 2, k});
  REQUIRE(m.at({1, 2}) == doctest::Approx(acc / 4));

  Tensor cat = concat({x, x}, 1);
  REQUIRE(cat.shape() == Shape{2, 6, 4});
  REQUIRE(cat.at({1, 4, 2}) == x.at({1, 1, 2}));

  Tensor sl = slice(cat, 1, 3, 3);
  REQUIRE(sl.shape() == Shape{2, 3, 4});
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 4; ++k) REQUIRE(sl.at({i, j, k}) == x.at({i, j, k}));
}
