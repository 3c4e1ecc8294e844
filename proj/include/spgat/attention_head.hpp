#pragma once

#include <cstdint>
#include <vector>

#include "spgat/ops.hpp"
#include "spgat/rng.hpp"

namespace spgat {

// Merges a stack of node-feature streams [B,N,d], ordered finest contextual
// level first and coarsest last, then classifies the center node.

struct GateParams {
  Tensor w;  // [d, 2d]
  Tensor b;  // [d]
};

struct HeadParams {
  std::vector<GateParams> gates;  // one per adjacent level pair, indexed by the finer level
  Tensor classifier_w;            // [C, d]
  Tensor classifier_b;            // [C]
};

HeadParams make_head_params(int64_t levels, int64_t d, int64_t classes, Rng& rng);

// Left fold from the coarsest stream toward the finest: at each step a
// sigmoid gate (one coefficient per channel, shared across nodes) convexly
// blends the finer stream with the running merge.
Tensor spectral_attention_merge(Tape& tape, const std::vector<Tensor>& streams,
                                const HeadParams& params);

// Elementwise mean across levels.
Tensor average_merge(Tape& tape, const std::vector<Tensor>& streams);

// Selects node (N-1)/2 and applies the linear classifier. N must be odd.
Tensor classify_center(Tape& tape, const Tensor& merged, const HeadParams& params);

}  // namespace spgat
