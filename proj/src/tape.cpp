#include "spgat/tape.hpp"

namespace spgat {

void Tape::backward(const Tensor& loss) {
  if (!loss.defined()) throw TapeError("backward: loss tensor is undefined");
  if (loss.size() != 1) {
    throw TapeError("backward: loss must be a scalar, got shape " +
                    shape_str(loss.shape()));
  }

  // The producing node is the last one whose output is `loss` (outputs are
  // fresh tensors, so there is at most one).
  int64_t producer = -1;
  for (int64_t i = static_cast<int64_t>(nodes_.size()) - 1; i >= 0; --i) {
    if (nodes_[static_cast<size_t>(i)].output.same_identity(loss)) {
      producer = i;
      break;
    }
  }
  if (producer < 0) {
    throw TapeError("backward: loss tensor was not produced on this tape");
  }

  for (int64_t i = 0; i <= producer; ++i) {
    const TapeNode& n = nodes_[static_cast<size_t>(i)];
    for (const Tensor& t : n.inputs) {
      if (t.requires_grad()) t.zero_grad();
    }
    n.output.zero_grad();
  }

  loss.grad_mut()[0] = 1.0;
  for (int64_t i = producer; i >= 0; --i) {
    nodes_[static_cast<size_t>(i)].backward();
  }
}

}  // namespace spgat
