#pragma once

#include <string>
#include <vector>

namespace mmdl {

struct GradSuiteEntry {
  std::string name;
  double max_rel_err = 0;
  double tolerance = 0;
  bool ok() const { return max_rel_err <= tolerance; }
};

// Finite-difference checks for every differentiable op (tolerance 1e-4, many
// random instances each) and, when include_models is set, for each model
// variant at a tiny ArchConfig (tolerance 1e-3).
std::vector<GradSuiteEntry> run_gradcheck_suite(bool include_models, int instances_per_op = 100);

}  // namespace mmdl
