#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "spgat/attention_head.hpp"
#include "spgat/graph_attention.hpp"
#include "spgat/pyramid.hpp"

namespace spgat {

enum class MergeKind { kAttention, kAverage };

struct ModelConfig {
  PyramidConfig pyramid;
  int64_t patch = 7;
  int64_t classes = 0;
  int64_t embed_dim = 0;  // attention embedding width; 0 means stream width
  double leaky_slope = 0.2;
  ScoreKind score = ScoreKind::kDotProduct;
  MergeKind merge = MergeKind::kAttention;
  bool lattice_gcn = false;  // swap attention for fixed-lattice propagation

  void validate() const;
  int64_t node_width() const { return pyramid.stream_channels(); }
};

// Full pipeline: pyramid streams over the spectrum, per-stream reasoning on
// the patch graph, stream merge, center-pixel classifier.
class SpgatModel {
 public:
  SpgatModel(ModelConfig config, uint64_t seed);

  // input [B,1,S,P,P] -> logits [B,classes].
  Tensor forward(Tape& tape, const Tensor& input, BatchNormMode mode);

  // Trainable tensors in a fixed order (construction order).
  std::vector<Tensor> parameters() const;
  // Batch-norm running statistics, fixed order; not trainable.
  std::vector<Tensor> state_tensors() const;

  const ModelConfig& config() const { return config_; }

 private:
  ModelConfig config_;
  PyramidParams pyramid_;
  std::vector<std::array<GatLayerParams, 2>> gat_;  // per stream, unless lattice_gcn
  std::vector<std::array<Tensor, 2>> gcn_;          // per stream, when lattice_gcn
  Tensor adjacency_;                                // constant, lattice_gcn only
  HeadParams head_;
};

}  // namespace spgat
