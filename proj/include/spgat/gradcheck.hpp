#pragma once

#include <functional>
#include <string>
#include <vector>

#include "spgat/tape.hpp"
#include "spgat/tensor.hpp"

namespace spgat {

// Builds a scalar loss from `inputs` using ops recorded on `tape`. The
// function must be a pure map from input values to the loss so that finite
// differences are meaningful.
using LossFn = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

struct GradCheckResult {
  double max_rel_err = 0.0;
  int64_t coords_checked = 0;
  std::string worst;  // locates the worst coordinate, e.g. "input 1 @ 17"
};

// Compares tape gradients against central differences with the given step.
// Every input must have requires_grad() set. Relative error per coordinate
// is |a - n| / max(1, |a|, |n|).
GradCheckResult gradcheck(const LossFn& f, const std::vector<Tensor>& inputs,
                          double step = 1e-5);

}  // namespace spgat
