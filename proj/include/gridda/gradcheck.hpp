#pragma once

// Central finite-difference verification in 64-bit mode: a battery over every
// primitive, the composed focal loss, and the full desk-scale detector loss
// (detection + adversarial terms) on a micro configuration.

#include <string>
#include <vector>

#include "gridda/finite_diff.hpp"

namespace gridda::ad::gradcheck {

struct CaseResult {
  std::string name;
  double max_rel_err = 0;
};

struct SuiteResult {
  std::vector<CaseResult> cases;
  double primitives_max = 0;  // over the per-primitive battery and focal loss
  double end_to_end = 0;      // full detector loss
  bool pass(double prim_tol = 1e-4, double e2e_tol = 1e-3) const {
    return primitives_max < prim_tol && end_to_end < e2e_tol;
  }
};

// battery_cases: random configurations per primitive (default gives ~100
// cases over the catalog). epsilon fixed at 1e-3 per the oracle contract.
SuiteResult run_suite(int battery_cases_per_op = 5, std::uint64_t seed = 7);

}  // namespace gridda::ad::gradcheck
