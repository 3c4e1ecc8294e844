#include "spgat/attention_head.hpp"

#include <string>

#include "spgat/init.hpp"

namespace spgat {
namespace {

void require_stack(const std::vector<Tensor>& streams, const char* who) {
  if (streams.empty()) {
    throw ConfigError(std::string(who) + ": stream stack must hold at least one level");
  }
  const Shape& ref = streams.front().shape();
  if (ref.size() != 3) {
    throw ShapeError(std::string(who) + ": streams must be [B,N,d], got " +
                     shape_str(ref));
  }
  for (size_t i = 1; i < streams.size(); ++i) {
    if (streams[i].shape() != ref) {
      throw ShapeError(std::string(who) + ": level " + std::to_string(i) +
                       " has shape " + shape_str(streams[i].shape()) +
                       ", expected " + shape_str(ref));
    }
  }
}

}  // namespace

HeadParams make_head_params(int64_t levels, int64_t d, int64_t classes, Rng& rng) {
  if (levels < 1 || d < 1 || classes < 1) {
    throw ConfigError("head params: levels, width, and classes must be positive");
  }
  HeadParams p;
  p.gates.reserve(static_cast<size_t>(levels - 1));
  for (int64_t i = 0; i + 1 < levels; ++i) {
    GateParams g;
    g.w = init_uniform({d, 2 * d}, 2 * d, rng);
    g.b = init_zeros({d});
    p.gates.push_back(std::move(g));
  }
  p.classifier_w = init_uniform({classes, d}, d, rng);
  p.classifier_b = init_zeros({classes});
  return p;
}

Tensor spectral_attention_merge(Tape& tape, const std::vector<Tensor>& streams,
                                const HeadParams& params) {
  require_stack(streams, "spectral_attention_merge");
  const size_t levels = streams.size();
  if (levels == 1) return streams.front();
  if (params.gates.size() != levels - 1) {
    throw ConfigError("spectral_attention_merge: expected " +
                      std::to_string(levels - 1) + " gates, got " +
                      std::to_string(params.gates.size()));
  }
  const int64_t n = streams.front().dim(1);
  Tensor merged = streams.back();
  for (size_t level = levels - 1; level-- > 0;) {
    const Tensor& finer = streams[level];
    const GateParams& gate = params.gates[level];
    Tensor pooled = ops::concat_last(tape, ops::mean_axis(tape, finer, 1, true),
                                     ops::mean_axis(tape, merged, 1, true));
    Tensor g = ops::sigmoid(tape, ops::linear(tape, pooled, gate.w, gate.b));
    g = ops::broadcast_axis(tape, g, 1, n);  // [B,1,d] -> [B,N,d]
    Tensor kept = ops::mul(tape, ops::affine(tape, g, -1.0, 1.0), merged);
    merged = ops::add(tape, ops::mul(tape, g, finer), kept);
  }
  return merged;
}

Tensor average_merge(Tape& tape, const std::vector<Tensor>& streams) {
  require_stack(streams, "average_merge");
  Tensor acc = streams.front();
  for (size_t i = 1; i < streams.size(); ++i) {
    acc = ops::add(tape, acc, streams[i]);
  }
  if (streams.size() == 1) return acc;
  return ops::affine(tape, acc, 1.0 / static_cast<double>(streams.size()), 0.0);
}

Tensor classify_center(Tape& tape, const Tensor& merged, const HeadParams& params) {
  if (merged.ndim() != 3) {
    throw ShapeError("classify_center: merged features must be [B,N,d], got " +
                     shape_str(merged.shape()));
  }
  const int64_t n = merged.dim(1);
  if (n % 2 == 0) {
    throw ConfigError("classify_center: node count " + std::to_string(n) +
                      " has no center (even patch)");
  }
  Tensor center = ops::select_axis(tape, merged, 1, (n - 1) / 2);  // [B,d]
  return ops::linear(tape, center, params.classifier_w, params.classifier_b);
}

}  // namespace spgat
