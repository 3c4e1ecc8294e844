#include "spgat/model.hpp"

#include <string>

#include "spgat/init.hpp"

namespace spgat {

void ModelConfig::validate() const {
  pyramid.validate();
  if (patch < 1 || patch % 2 == 0) {
    throw ConfigError("model: patch side must be odd and positive, got " +
                      std::to_string(patch));
  }
  if (classes < 2) {
    throw ConfigError("model: need at least 2 classes, got " +
                      std::to_string(classes));
  }
  if (embed_dim < 0) {
    throw ConfigError("model: embed_dim must be >= 0 (0 selects the stream width)");
  }
  if (leaky_slope < 0.0 || leaky_slope >= 1.0) {
    throw ConfigError("model: leaky slope must lie in [0,1)");
  }
}

SpgatModel::SpgatModel(ModelConfig config, uint64_t seed) : config_(config) {
  config_.validate();
  // Streams 0-2 belong to the scene generator; weights use their own.
  Rng rng(Rng::derive(seed, 3));
  pyramid_ = make_pyramid_params(config_.pyramid, rng);

  const int64_t d = config_.node_width();
  const int64_t de = config_.embed_dim > 0 ? config_.embed_dim : d;
  const int64_t streams = config_.pyramid.stream_count();
  if (config_.lattice_gcn) {
    for (int64_t s = 0; s < streams; ++s) {
      gcn_.push_back({init_uniform({d, d}, d, rng), init_uniform({d, d}, d, rng)});
    }
    adjacency_ = lattice_adjacency_normalized(config_.patch);
  } else {
    for (int64_t s = 0; s < streams; ++s) {
      std::array<GatLayerParams, 2> layers = {
          make_gat_layer_params(d, de, d, rng, config_.leaky_slope, config_.score),
          make_gat_layer_params(d, de, d, rng, config_.leaky_slope, config_.score)};
      gat_.push_back(std::move(layers));
    }
  }
  head_ = make_head_params(streams, d, config_.classes, rng);
}

Tensor SpgatModel::forward(Tape& tape, const Tensor& input, BatchNormMode mode) {
  if (input.ndim() != 5 || input.dim(3) != config_.patch ||
      input.dim(4) != config_.patch) {
    throw ShapeError("model: input must be [B,1,S," + std::to_string(config_.patch) +
                     "," + std::to_string(config_.patch) + "], got " +
                     shape_str(input.shape()));
  }
  std::vector<Tensor> streams = pyramid_forward(tape, input, config_.pyramid,
                                                pyramid_, mode, config_.leaky_slope);
  std::vector<Tensor> nodes;
  nodes.reserve(streams.size());
  for (size_t s = 0; s < streams.size(); ++s) {
    Tensor h = collapse_spectrum(tape, streams[s]);
    if (config_.lattice_gcn) {
      h = gcn_layer(tape, h, adjacency_, gcn_[s][0], config_.leaky_slope);
      h = gcn_layer(tape, h, adjacency_, gcn_[s][1], config_.leaky_slope);
    } else {
      h = gat_block(tape, h, gat_[s][0], gat_[s][1]);
    }
    nodes.push_back(h);
  }
  Tensor merged = config_.merge == MergeKind::kAttention
                      ? spectral_attention_merge(tape, nodes, head_)
                      : average_merge(tape, nodes);
  return classify_center(tape, merged, head_);
}

namespace {

void push(std::vector<Tensor>& out, const Tensor& t) {
  if (t.defined()) out.push_back(t);
}

void push_bottleneck(std::vector<Tensor>& out, const BottleneckParams& b) {
  push(out, b.reduce_w);
  push(out, b.reduce_b);
  push(out, b.conv_w);
  push(out, b.conv_b);
  push(out, b.expand_w);
  push(out, b.expand_b);
  push(out, b.proj_w);
  push(out, b.proj_b);
}

void push_gat_layer(std::vector<Tensor>& out, const GatLayerParams& p) {
  push(out, p.theta_w);
  push(out, p.theta_b);
  push(out, p.phi_w);
  push(out, p.phi_b);
  push(out, p.psi_w);
  push(out, p.xi_w);
  push(out, p.xi_b);
}

}  // namespace

std::vector<Tensor> SpgatModel::parameters() const {
  std::vector<Tensor> out;
  for (const StreamParams& s : pyramid_.streams) {
    push(out, s.conv_w);
    push(out, s.conv_b);
    push(out, s.bn_gamma);
    push(out, s.bn_beta);
    push_bottleneck(out, s.block1);
    push_bottleneck(out, s.block2);
  }
  for (const auto& pair : gat_) {
    push_gat_layer(out, pair[0]);
    push_gat_layer(out, pair[1]);
  }
  for (const auto& pair : gcn_) {
    push(out, pair[0]);
    push(out, pair[1]);
  }
  for (const GateParams& g : head_.gates) {
    push(out, g.w);
    push(out, g.b);
  }
  push(out, head_.classifier_w);
  push(out, head_.classifier_b);
  return out;
}

std::vector<Tensor> SpgatModel::state_tensors() const {
  std::vector<Tensor> out;
  for (const StreamParams& s : pyramid_.streams) {
    out.push_back(s.bn_state.running_mean);
    out.push_back(s.bn_state.running_var);
  }
  return out;
}

}  // namespace spgat
