#pragma once

#include <cmath>

#include "spgat/rng.hpp"
#include "spgat/tensor.hpp"

namespace spgat {

// Uniform in +-sqrt(6/fan_in), the initialization used for every weight
// tensor in the network. Biases start at zero.
inline Tensor init_uniform(Shape shape, int64_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> v(static_cast<size_t>(numel(shape)));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from_data(std::move(shape), std::move(v), /*requires_grad=*/true);
}

inline Tensor init_zeros(Shape shape) {
  return Tensor::zeros(std::move(shape), /*requires_grad=*/true);
}

inline Tensor init_ones(Shape shape) {
  return Tensor::full(std::move(shape), 1.0, /*requires_grad=*/true);
}

}  // namespace spgat
