#include "spgat/gradcheck_suite.hpp"

#include <cmath>
#include <utility>

#include "spgat/gradcheck.hpp"
#include "spgat/model.hpp"
#include "spgat/ops.hpp"
#include "spgat/rng.hpp"

namespace spgat {
namespace {

Tensor randt(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<size_t>(numel(shape)));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(v), /*requires_grad=*/true);
}

// Magnitudes in [0.3, 1.3] with random sign keep finite differences away
// from the kinks of leaky_relu and abs.
Tensor randt_off_kink(Rng& rng, Shape shape) {
  std::vector<double> v(static_cast<size_t>(numel(shape)));
  for (double& x : v) {
    const double mag = rng.uniform(0.3, 1.3);
    x = rng.uniform(0.0, 1.0) < 0.5 ? -mag : mag;
  }
  return Tensor::from_data(std::move(shape), std::move(v), /*requires_grad=*/true);
}

Tensor constant_like(Rng& rng, const Tensor& t) {
  std::vector<double> v(t.data().size());
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor::from_data(t.shape(), std::move(v));
}

// sum(y * r): turns any tensor-valued op into a scalar loss with dense,
// nonuniform output weighting.
Tensor weighted(Tape& tape, const Tensor& y, const Tensor& r) {
  return ops::sum_all(tape, ops::mul(tape, y, r));
}

struct Suite {
  double tol;
  std::vector<CheckOutcome> outcomes;

  void run(const std::string& name, const LossFn& f,
           const std::vector<Tensor>& inputs) {
    GradCheckResult r = gradcheck(f, inputs);
    outcomes.push_back({name, r.max_rel_err, r.max_rel_err < tol});
  }
};

}  // namespace

std::vector<CheckOutcome> run_gradcheck_suite(double tol) {
  Suite s{tol, {}};
  Rng rng(414243);

  {
    Tensor a = randt(rng, {3, 4}), b = randt(rng, {3, 4});
    Tensor r = constant_like(rng, a);
    s.run("add", [r](Tape& t, const std::vector<Tensor>& in) {
      return weighted(t, ops::add(t, in[0], in[1]), r);
    }, {a, b});
    s.run("sub", [r](Tape& t, const std::vector<Tensor>& in) {
      return weighted(t, ops::sub(t, in[0], in[1]), r);
    }, {a, b});
    s.run("mul", [r](Tape& t, const std::vector<Tensor>& in) {
      return weighted(t, ops::mul(t, in[0], in[1]), r);
    }, {a, b});
    s.run("affine", [r](Tape& t, const std::vector<Tensor>& in) {
      return weighted(t, ops::affine(t, in[0], -1.7, 0.4), r);
    }, {a});
    s.run("sigmoid", [r](Tape& t, const std::vector<Tensor>& in) {
      return weighted(t, ops::sigmoid(t, in[0]), r);
    }, {a});
  }
  {
    Tensor x = randt_off_kink(rng, {2, 5});
    Tensor r = constant_like(rng, x);
    s.run("leaky_relu", [r](Tape& t, const std::vector<Tensor>& in) {
      return weighted(t, ops::leaky_relu(t, in[0], 0.2), r);
    }, {x});
    s.run("abs", [r](Tape& t, const std::vector<Tensor>& in) {
      return weighted(t, ops::abs(t, in[0]), r);
    }, {x});
  }
  {
    Tensor x = randt(rng, {2, 3, 4});
    Tensor r = constant_like(rng, x);
    s.run("reshape", [r](Tape& t, const std::vector<Tensor>& in) {
      return weighted(t, ops::reshape(t, ops::reshape(t, in[0], {6, 4}), {2, 3, 4}),
                      r);
    }, {x});
    Tensor rt = Tensor::from_data({4, 2, 3}, std::vector<double>(24, 0.5));
    s.run("transpose", [rt](Tape& t, const std::vector<Tensor>& in) {
      return weighted(t, ops::transpose(t, in[0], {2, 0, 1}), rt);
    }, {x});
    Tensor sel = constant_like(rng, Tensor::zeros({2, 4}));
    s.run("select_axis", [sel](Tape& t, const std::vector<Tensor>& in) {
      return weighted(t, ops::select_axis(t, in[0], 1, 2), sel);
    }, {x});
    Tensor mr = constant_like(rng, Tensor::zeros({2, 4}));
    s.run("mean_axis", [mr](Tape& t, const std::vector<Tensor>& in) {
      return weighted(t, ops::mean_axis(t, in[0], 1, false), mr);
    }, {x});
    s.run("sum_all", [](Tape& t, const std::vector<Tensor>& in) {
      return ops::sum_all(t, in[0]);
    }, {x});
  }
  {
    Tensor x = randt(rng, {2, 1, 3});
    Tensor r = constant_like(rng, Tensor::zeros({2, 4, 3}));
    s.run("broadcast_axis", [r](Tape& t, const std::vector<Tensor>& in) {
      return weighted(t, ops::broadcast_axis(t, in[0], 1, 4), r);
    }, {x});
    Tensor a = randt(rng, {2, 3}), b = randt(rng, {2, 2});
    Tensor cr = constant_like(rng, Tensor::zeros({2, 5}));
    s.run("concat_last", [cr](Tape& t, const std::vector<Tensor>& in) {
      return weighted(t, ops::concat_last(t, in[0], in[1]), cr);
    }, {a, b});
  }
  {
    Tensor x = randt(rng, {4, 3}), w = randt(rng, {2, 3}), b = randt(rng, {2});
    Tensor r = constant_like(rng, Tensor::zeros({4, 2}));
    s.run("linear", [r](Tape& t, const std::vector<Tensor>& in) {
      return weighted(t, ops::linear(t, in[0], in[1], in[2]), r);
    }, {x, w, b});
    s.run("linear_no_bias", [r](Tape& t, const std::vector<Tensor>& in) {
      return weighted(t, ops::linear(t, in[0], in[1], Tensor()), r);
    }, {x, w});
    Tensor ma = randt(rng, {2, 3, 4}), mb = randt(rng, {2, 4, 5});
    Tensor mr = constant_like(rng, Tensor::zeros({2, 3, 5}));
    s.run("matmul", [mr](Tape& t, const std::vector<Tensor>& in) {
      return weighted(t, ops::matmul(t, in[0], in[1]), mr);
    }, {ma, mb});
  }
  {
    Tensor x = randt(rng, {2, 2, 7, 2, 2});
    Tensor w = randt(rng, {3, 2, 3}), b = randt(rng, {3});
    Tensor r = constant_like(rng, Tensor::zeros({2, 3, 7, 2, 2}));
    s.run("atrous_conv_rate2", [r](Tape& t, const std::vector<Tensor>& in) {
      return weighted(t, ops::atrous_conv_spectral(t, in[0], in[1], in[2], 2), r);
    }, {x, w, b});
    s.run("atrous_conv_circular", [r](Tape& t, const std::vector<Tensor>& in) {
      return weighted(t, ops::atrous_conv_spectral(t, in[0], in[1], in[2], 3,
                                                   PadMode::kCircular), r);
    }, {x, w, b});
    Tensor pw = randt(rng, {3, 2}), pb = randt(rng, {3});
    s.run("conv_pointwise", [r](Tape& t, const std::vector<Tensor>& in) {
      return weighted(t, ops::conv_pointwise(t, in[0], in[1], in[2]), r);
    }, {x, pw, pb});
    Tensor prr = constant_like(rng, Tensor::zeros({2, 2, 1, 2, 2}));
    s.run("adaptive_avg_pool", [prr](Tape& t, const std::vector<Tensor>& in) {
      return weighted(t, ops::adaptive_avg_pool_spectral(t, in[0]), prr);
    }, {x});
  }
  {
    Tensor x = randt(rng, {3, 2, 4});
    Tensor gamma = randt(rng, {2}, 0.5, 1.5), beta = randt(rng, {2});
    Tensor r = constant_like(rng, x);
    s.run("batch_norm_train", [r](Tape& t, const std::vector<Tensor>& in) {
      BatchNormState state = BatchNormState::init(2);
      return weighted(t, ops::batch_norm(t, in[0], in[1], in[2], state,
                                         BatchNormMode::kTrain, 1e-5, 0.1), r);
    }, {x, gamma, beta});
    BatchNormState eval_state = BatchNormState::init(2);
    eval_state.running_mean.data_mut()[0] = 0.2;
    eval_state.running_mean.data_mut()[1] = -0.4;
    eval_state.running_var.data_mut()[0] = 1.7;
    eval_state.running_var.data_mut()[1] = 0.6;
    s.run("batch_norm_eval", [r, &eval_state](Tape& t, const std::vector<Tensor>& in) {
      return weighted(t, ops::batch_norm(t, in[0], in[1], in[2], eval_state,
                                         BatchNormMode::kEval, 1e-5, 0.1), r);
    }, {x, gamma, beta});
  }
  {
    Tensor x = randt(rng, {3, 5});
    Tensor r = constant_like(rng, x);
    s.run("softmax", [r](Tape& t, const std::vector<Tensor>& in) {
      return weighted(t, ops::softmax(t, in[0]), r);
    }, {x});
    std::vector<int64_t> labels = {2, 0, 4};
    s.run("cross_entropy", [labels](Tape& t, const std::vector<Tensor>& in) {
      return ops::cross_entropy(t, in[0], labels);
    }, {x});
  }
  {
    // Full network: pyramid, attention, gated merge, classifier, loss.
    ModelConfig mc;
    mc.pyramid.rates = {1, 2, 4};
    mc.pyramid.branch_channels = 6;
    mc.pyramid.bottleneck_mids = {4, 4};
    mc.pyramid.expansion = 2;
    mc.pyramid.pooled_stream = true;
    mc.patch = 3;
    mc.classes = 3;
    SpgatModel model(mc, 90210);
    Tensor x = randt(rng, {1, 1, 16, 3, 3});
    std::vector<int64_t> labels = {1};
    s.run("end_to_end", [&model, x, labels](Tape& t, const std::vector<Tensor>&) {
      Tensor logits = model.forward(t, x, BatchNormMode::kTrain);
      return ops::cross_entropy(t, logits, labels);
    }, model.parameters());
  }
  return s.outcomes;
}

}  // namespace spgat
