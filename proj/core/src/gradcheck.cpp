#include "mmdl/gradcheck.hpp"

#include <cmath>
#include <vector>

#include "mmdl/tape.hpp"

namespace mmdl {

namespace {

double rel_err(double analytic, double numeric) {
  return std::fabs(analytic - numeric) / std::max(1e-8, std::fabs(analytic) + std::fabs(numeric));
}

}  // namespace

double finite_diff_gradcheck(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h) {
  if (h <= 0.0) throw Error(ErrorCategory::contract, "gradcheck: h must be positive");
  x.set_requires_grad(true);
  x.zero_grad();
  std::vector<double> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = f(x);
    tape.backward(loss);
    auto g = x.grad();
    analytic.assign(g.begin(), g.end());
  }
  double worst = 0.0;
  auto vals = x.data();
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const double orig = vals[i];
    vals[i] = orig + h;
    const double up = f(x).scalar_value();
    vals[i] = orig - h;
    const double dn = f(x).scalar_value();
    vals[i] = orig;
    worst = std::max(worst, rel_err(analytic[i], (up - dn) / (2.0 * h)));
  }
  return worst;
}

double finite_diff_gradcheck_many(const std::function<Tensor()>& f, const std::vector<Tensor>& leaves,
                                  double h) {
  if (h <= 0.0) throw Error(ErrorCategory::contract, "gradcheck: h must be positive");
  std::vector<std::vector<double>> analytic(leaves.size());
  for (auto t : leaves) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = f();
    tape.backward(loss);
    for (std::size_t li = 0; li < leaves.size(); ++li) {
      if (leaves[li].has_grad()) {
        auto g = leaves[li].grad();
        analytic[li].assign(g.begin(), g.end());
      } else {
        analytic[li].assign(static_cast<std::size_t>(leaves[li].numel()), 0.0);
      }
    }
  }
  double worst = 0.0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor t = leaves[li];
    auto vals = t.data();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + h;
      const double up = f().scalar_value();
      vals[i] = orig - h;
      const double dn = f().scalar_value();
      vals[i] = orig;
      worst = std::max(worst, rel_err(analytic[li][i], (up - dn) / (2.0 * h)));
    }
  }
  return worst;
}

}  // namespace mmdl
