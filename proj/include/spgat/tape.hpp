#pragma once

#include <functional>
#include <vector>

#include "spgat/tensor.hpp"

namespace spgat {

// One recorded primitive application. `backward` reads the output gradient
// and accumulates (+=) into the input gradients; any forward values it needs
// are captured inside the closure.
struct TapeNode {
  std::vector<Tensor> inputs;
  Tensor output;
  std::function<void()> backward;
};

// Append-only record of primitive applications in execution order, which is
// topological by construction: a node's inputs are produced before it.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  size_t size() const { return nodes_.size(); }
  void record(TapeNode node) { nodes_.push_back(std::move(node)); }

  // Reverse-mode sweep. Seeds d(loss)/d(loss) = 1, then runs the backward
  // rule of every node up to and including the one that produced `loss`, in
  // reverse order, visiting each exactly once. Gradients sum where a tensor
  // fans out into several consumers. All gradient buffers touched by those
  // nodes are zeroed first, so afterwards every buffer holds the gradient of
  // `loss` alone.
  void backward(const Tensor& loss);

 private:
  std::vector<TapeNode> nodes_;
  bool recording_;
};

}  // namespace spgat
