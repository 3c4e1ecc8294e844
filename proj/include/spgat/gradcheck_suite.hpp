#pragma once

#include <string>
#include <vector>

namespace spgat {

struct CheckOutcome {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = false;
};

// Finite-difference verification of every primitive plus the full network
// graph on a small input. All checks use fixed seeds, so results are
// reproducible run to run.
std::vector<CheckOutcome> run_gradcheck_suite(double tol = 1e-4);

}  // namespace spgat
