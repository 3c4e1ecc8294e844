#include "spgat/adam.hpp"

#include <cmath>
#include <string>

namespace spgat {

Adam::Adam(std::vector<Tensor> params, AdamConfig config)
    : params_(std::move(params)), cfg_(config) {
  if (!(cfg_.lr >= 0.0) || !(cfg_.beta1 >= 0.0 && cfg_.beta1 < 1.0) ||
      !(cfg_.beta2 >= 0.0 && cfg_.beta2 < 1.0) || !(cfg_.eps > 0.0)) {
    throw ConfigError("Adam: invalid hyperparameters");
  }
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    const Tensor& p = params_[i];
    if (!p.defined() || !p.requires_grad()) {
      throw ConfigError("Adam: parameter " + std::to_string(i) +
                        " has no gradient storage");
    }
    m_.emplace_back(static_cast<size_t>(p.size()), 0.0);
    v_.emplace_back(static_cast<size_t>(p.size()), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    const Tensor& p = params_[i];
    const double* g = p.grad().data();
    double* w = p.data_mut().data();
    double* m = m_[i].data();
    double* v = v_[i].data();
    const int64_t n = p.size();
    for (int64_t j = 0; j < n; ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
    check_finite(p.data(), "Adam::step");
  }
}

void Adam::zero_grad() {
  for (const Tensor& p : params_) p.zero_grad();
}

}  // namespace spgat
