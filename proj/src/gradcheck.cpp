#include "spgat/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace spgat {

GradCheckResult gradcheck(const LossFn& f, const std::vector<Tensor>& inputs,
                          double step) {
  if (!(step > 0.0)) throw ConfigError("gradcheck: step must be positive");
  for (size_t i = 0; i < inputs.size(); ++i) {
    if (!inputs[i].defined() || !inputs[i].requires_grad()) {
      throw ConfigError("gradcheck: input " + std::to_string(i) +
                        " has no gradient storage");
    }
  }

  // Analytic pass: record, run backward from the scalar loss.
  std::vector<std::vector<double>> analytic;
  {
    Tape tape(true);
    for (const Tensor& t : inputs) t.zero_grad();
    Tensor loss = f(tape, inputs);
    tape.backward(loss);
    for (const Tensor& t : inputs) {
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    }
  }

  auto eval = [&]() {
    Tape tape(false);
    return f(tape, inputs).value();
  };

  GradCheckResult result;
  for (size_t i = 0; i < inputs.size(); ++i) {
    double* data = inputs[i].data_mut().data();
    const int64_t n = inputs[i].size();
    for (int64_t j = 0; j < n; ++j) {
      const double saved = data[j];
      data[j] = saved + step;
      const double up = eval();
      data[j] = saved - step;
      const double down = eval();
      data[j] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[i][static_cast<size_t>(j)];
      const double rel =
          std::fabs(a - numeric) /
          std::max({1.0, std::fabs(a), std::fabs(numeric)});
      ++result.coords_checked;
      if (rel > result.max_rel_err) {
        result.max_rel_err = rel;
        result.worst = "input " + std::to_string(i) + " @ " + std::to_string(j);
      }
    }
  }
  return result;
}

}  // namespace spgat
