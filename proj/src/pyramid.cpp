#include "spgat/pyramid.hpp"

#include <string>

#include "spgat/init.hpp"

namespace spgat {

void PyramidConfig::validate() const {
  if (rates.empty()) throw ConfigError("pyramid: at least one dilation rate required");
  if (rates.front() != 1) {
    throw ConfigError("pyramid: first dilation rate must be 1, got " +
                      std::to_string(rates.front()));
  }
  for (size_t i = 0; i < rates.size(); ++i) {
    if (rates[i] < 1) throw ConfigError("pyramid: dilation rates must be positive");
    if (i > 0 && rates[i] <= rates[i - 1]) {
      throw ConfigError("pyramid: dilation rates must be strictly increasing");
    }
  }
  if (branch_channels < 1) throw ConfigError("pyramid: branch_channels must be >= 1");
  if (bottleneck_mids.first < 1 || bottleneck_mids.second < 1) {
    throw ConfigError("pyramid: bottleneck widths must be >= 1");
  }
  if (expansion < 1) throw ConfigError("pyramid: expansion must be >= 1");
}

BottleneckParams make_bottleneck_params(int64_t in_ch, int64_t mid,
                                        int64_t expansion, Rng& rng) {
  const int64_t out = mid * expansion;
  BottleneckParams p;
  p.reduce_w = init_uniform({mid, in_ch}, in_ch, rng);
  p.reduce_b = init_zeros({mid});
  p.conv_w = init_uniform({mid, mid, PyramidConfig::kKernel},
                          mid * PyramidConfig::kKernel, rng);
  p.conv_b = init_zeros({mid});
  p.expand_w = init_uniform({out, mid}, mid, rng);
  p.expand_b = init_zeros({out});
  if (in_ch != out) {
    p.proj_w = init_uniform({out, in_ch}, in_ch, rng);
    p.proj_b = init_zeros({out});
  }
  return p;
}

StreamParams make_stream_params(const PyramidConfig& config, bool pooled, Rng& rng) {
  config.validate();
  const int64_t cb = config.branch_channels;
  StreamParams s;
  if (pooled) {
    s.conv_w = init_uniform({cb, 1}, 1, rng);
  } else {
    s.conv_w = init_uniform({cb, 1, PyramidConfig::kKernel},
                            PyramidConfig::kKernel, rng);
  }
  s.conv_b = init_zeros({cb});
  s.bn_gamma = init_ones({cb});
  s.bn_beta = init_zeros({cb});
  s.bn_state = BatchNormState::init(cb);
  s.block1 = make_bottleneck_params(cb, config.bottleneck_mids.first,
                                    config.expansion, rng);
  s.block2 = make_bottleneck_params(config.bottleneck_mids.first * config.expansion,
                                    config.bottleneck_mids.second, config.expansion,
                                    rng);
  return s;
}

PyramidParams make_pyramid_params(const PyramidConfig& config, Rng& rng) {
  config.validate();
  PyramidParams p;
  for (size_t i = 0; i < config.rates.size(); ++i) {
    p.streams.push_back(make_stream_params(config, /*pooled=*/false, rng));
  }
  if (config.pooled_stream) {
    p.streams.push_back(make_stream_params(config, /*pooled=*/true, rng));
  }
  return p;
}

Tensor bottleneck_forward(Tape& tape, const Tensor& x,
                          const BottleneckParams& params, double slope) {
  Tensor h = ops::conv_pointwise(tape, x, params.reduce_w, params.reduce_b);
  h = ops::atrous_conv_spectral(tape, h, params.conv_w, params.conv_b, /*rate=*/1);
  h = ops::conv_pointwise(tape, h, params.expand_w, params.expand_b);
  Tensor skip = params.proj_w.defined()
                    ? ops::conv_pointwise(tape, x, params.proj_w, params.proj_b)
                    : x;
  return ops::leaky_relu(tape, ops::add(tape, h, skip), slope);
}

namespace {

void require_stream_input(const Tensor& input, const char* who) {
  if (input.ndim() != 5 || input.dim(1) != 1) {
    throw ShapeError(std::string(who) + ": input must be [B,1,S,H,W], got " +
                     shape_str(input.shape()));
  }
}

}  // namespace

Tensor branch_forward(Tape& tape, const Tensor& input, int64_t rate,
                      StreamParams& params, BatchNormMode mode, double slope) {
  require_stream_input(input, "branch_forward");
  Tensor h = ops::atrous_conv_spectral(tape, input, params.conv_w, params.conv_b, rate);
  h = ops::batch_norm(tape, h, params.bn_gamma, params.bn_beta, params.bn_state, mode);
  h = ops::leaky_relu(tape, h, slope);
  h = bottleneck_forward(tape, h, params.block1, slope);
  return bottleneck_forward(tape, h, params.block2, slope);
}

Tensor spectral_pool_forward(Tape& tape, const Tensor& input, StreamParams& params,
                             BatchNormMode mode, double slope) {
  require_stream_input(input, "spectral_pool_forward");
  const int64_t s_len = input.dim(2);
  Tensor h = ops::adaptive_avg_pool_spectral(tape, input);
  h = ops::conv_pointwise(tape, h, params.conv_w, params.conv_b);
  h = ops::batch_norm(tape, h, params.bn_gamma, params.bn_beta, params.bn_state, mode);
  h = ops::relu(tape, h);
  h = ops::broadcast_axis(tape, h, 2, s_len);
  h = bottleneck_forward(tape, h, params.block1, slope);
  return bottleneck_forward(tape, h, params.block2, slope);
}

std::vector<Tensor> pyramid_forward(Tape& tape, const Tensor& input,
                                    const PyramidConfig& config,
                                    PyramidParams& params, BatchNormMode mode,
                                    double slope) {
  config.validate();
  require_stream_input(input, "pyramid_forward");
  if (static_cast<int64_t>(params.streams.size()) != config.stream_count()) {
    throw ConfigError("pyramid_forward: parameter set holds " +
                      std::to_string(params.streams.size()) + " streams, config needs " +
                      std::to_string(config.stream_count()));
  }
  std::vector<Tensor> streams;
  streams.reserve(params.streams.size());
  for (size_t i = 0; i < config.rates.size(); ++i) {
    streams.push_back(branch_forward(tape, input, config.rates[i],
                                     params.streams[i], mode, slope));
  }
  if (config.pooled_stream) {
    streams.push_back(
        spectral_pool_forward(tape, input, params.streams.back(), mode, slope));
  }
  return streams;
}

}  // namespace spgat
