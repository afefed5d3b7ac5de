#pragma once

#include <functional>

#include "mmdl/tensor.hpp"

namespace mmdl {

// Max over coordinates of |analytic - central difference| /
// max(1e-8, |analytic| + |numeric|). `f` must build a scalar with the op
// vocabulary und must be twice differentiable near x; functions with
// discontinuities at x (top-k style selections, dropout with a fresh mask
// per call) are unsupported inputs.
double finite_diff_gradcheck(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h);

// Same check against several leaves at once (model parameters); the
// function is re-evaluated with all leaves in place.
double finite_diff_gradcheck_many(const std::function<Tensor()>& f, const std::vector<Tensor>& leaves,
                                  double h);

}  // namespace mmdl
