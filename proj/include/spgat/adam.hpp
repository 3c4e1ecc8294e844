#pragma once

#include <cstdint>
#include <vector>

#include "spgat/tensor.hpp"

namespace spgat {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Holds handles to the parameters it updates;
// step() reads each parameter's current gradient buffer in place.
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, AdamConfig config = {});

  void step();
  void zero_grad();
  int64_t steps() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  AdamConfig cfg_;
  int64_t t_ = 0;
};

}  // namespace spgat
