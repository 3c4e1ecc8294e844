#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "spgat/tape.hpp"
#include "spgat/tensor.hpp"

namespace spgat {

// Per-channel running statistics consumed by eval-mode batch_norm and
// updated by train-mode batch_norm.
struct BatchNormState {
  Tensor running_mean;  // [C], no grad
  Tensor running_var;   // [C], no grad

  static BatchNormState init(int64_t channels);
};

enum class BatchNormMode { kTrain, kEval };

// Spectral-axis boundary handling for the dilated convolution. Zero padding
// is the production mode; circular exists for shift-consistency tests.
enum class PadMode { kZero, kCircular };

namespace ops {

// ---- elementwise ----
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
// scale * x + shift with scalar constants.
Tensor affine(Tape& tape, const Tensor& x, double scale, double shift);
Tensor leaky_relu(Tape& tape, const Tensor& x, double slope);
Tensor relu(Tape& tape, const Tensor& x);
Tensor sigmoid(Tape& tape, const Tensor& x);
Tensor abs(Tape& tape, const Tensor& x);

// ---- shape manipulation ----
Tensor reshape(Tape& tape, const Tensor& x, Shape shape);
Tensor transpose(Tape& tape, const Tensor& x, std::vector<int> perm);
// Expands an extent-1 axis to n by repetition.
Tensor broadcast_axis(Tape& tape, const Tensor& x, int axis, int64_t n);
// Removes `axis`, keeping the slice at `index`.
Tensor select_axis(Tape& tape, const Tensor& x, int axis, int64_t index);
Tensor concat_last(Tape& tape, const Tensor& a, const Tensor& b);

// ---- reductions ----
Tensor mean_axis(Tape& tape, const Tensor& x, int axis, bool keepdim);
Tensor sum_all(Tape& tape, const Tensor& x);

// ---- linear algebra ----
// y[..., o] = b[o] + sum_i W[o, i] * x[..., i]; W is [Dout, Din]. Pass an
// undefined Tensor for a bias-free map.
Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias);
// Batched [*, n, m] x [*, m, k] -> [*, n, k]; leading dims must match.
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);

// ---- network primitives ----
// Dilated convolution along the spectral axis only. input [B,Cin,S,H,W],
// weight [Cout,Cin,K] with K odd, bias [Cout]. The input is padded by
// rate*(K-1)/2 on both spectral ends so the output keeps extent S:
//   y[b,co,s,i,j] = bias[co]
//     + sum_ci sum_k x_pad[b,ci, s + rate*k, i, j] * w[co,ci,k].
Tensor atrous_conv_spectral(Tape& tape, const Tensor& input, const Tensor& weight,
                            const Tensor& bias, int64_t rate,
                            PadMode pad = PadMode::kZero);

// 1x1x1 convolution: per-location linear map across channels.
// input [B,Cin,S,H,W], weight [Cout,Cin], bias [Cout].
Tensor conv_pointwise(Tape& tape, const Tensor& input, const Tensor& weight,
                      const Tensor& bias);

// Normalizes per channel (axis 1) over every other axis. Train mode uses
// batch statistics (biased variance) and updates the running stats by
// running = (1 - momentum) * running + momentum * batch; eval mode uses the
// running stats as constants.
Tensor batch_norm(Tape& tape, const Tensor& input, const Tensor& gamma,
                  const Tensor& beta, BatchNormState& state, BatchNormMode mode,
                  double eps = 1e-5, double momentum = 0.1);

// Mean over the spectral axis of a [B,C,S,H,W] tensor -> [B,C,1,H,W].
Tensor adaptive_avg_pool_spectral(Tape& tape, const Tensor& input);

// Numerically stable softmax over the last axis (row max subtracted).
Tensor softmax(Tape& tape, const Tensor& x);

// Mean over rows of -log softmax(logits)[label], in log-sum-exp form.
// logits [B,C], labels[i] in [0, C).
Tensor cross_entropy(Tape& tape, const Tensor& logits,
                     std::span<const int64_t> labels);

}  // namespace ops
}  // namespace spgat
