#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "spgat/ops.hpp"
#include "spgat/rng.hpp"
#include "spgat/tape.hpp"

namespace spgat {

struct PyramidConfig {
  std::vector<int64_t> rates = {1, 12, 24, 36};
  int64_t branch_channels = 24;  // width after the entry convolution
  std::pair<int64_t, int64_t> bottleneck_mids = {16, 32};
  int64_t expansion = 2;
  bool pooled_stream = true;

  static constexpr int64_t kKernel = 3;

  void validate() const;
  // Channel width every stream ends with.
  int64_t stream_channels() const { return bottleneck_mids.second * expansion; }
  int64_t stream_count() const {
    return static_cast<int64_t>(rates.size()) + (pooled_stream ? 1 : 0);
  }
};

// reduce (pointwise) -> spectral conv K=3 rate 1 -> expand (pointwise),
// plus a skip that is projected when in/out widths differ. Activation is
// applied after the addition.
struct BottleneckParams {
  Tensor reduce_w, reduce_b;
  Tensor conv_w, conv_b;
  Tensor expand_w, expand_b;
  Tensor proj_w, proj_b;  // defined iff in-width != out-width
};

struct StreamParams {
  // Entry stage: rate branches hold an atrous kernel [Cb,1,K]; the pooled
  // stream holds a pointwise kernel [Cb,1].
  Tensor conv_w, conv_b;
  Tensor bn_gamma, bn_beta;
  BatchNormState bn_state;
  BottleneckParams block1, block2;
};

struct PyramidParams {
  // One per rate, in config order, then the pooled stream when enabled.
  std::vector<StreamParams> streams;
};

BottleneckParams make_bottleneck_params(int64_t in_ch, int64_t mid,
                                        int64_t expansion, Rng& rng);
StreamParams make_stream_params(const PyramidConfig& config, bool pooled, Rng& rng);
PyramidParams make_pyramid_params(const PyramidConfig& config, Rng& rng);

Tensor bottleneck_forward(Tape& tape, const Tensor& x,
                          const BottleneckParams& params, double slope);

// atrous conv(rate) -> batch norm -> leaky_relu -> two bottlenecks.
Tensor branch_forward(Tape& tape, const Tensor& input, int64_t rate,
                      StreamParams& params, BatchNormMode mode, double slope);

// pool over spectrum -> pointwise conv -> batch norm -> relu -> repeat to
// spectral length S -> the same two bottlenecks.
Tensor spectral_pool_forward(Tape& tape, const Tensor& input, StreamParams& params,
                             BatchNormMode mode, double slope);

std::vector<Tensor> pyramid_forward(Tape& tape, const Tensor& input,
                                    const PyramidConfig& config,
                                    PyramidParams& params, BatchNormMode mode,
                                    double slope);

}  // namespace spgat
