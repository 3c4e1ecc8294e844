#pragma once

#include <string>
#include <vector>

#include "spgat/tensor.hpp"

namespace spgat {

// Binary snapshot of an ordered tensor list (magic SPGP, version, then each
// tensor's dims and little-endian f64 payload). Order is the caller's
// contract; the model writes trainables first, then running stats.
void save_parameters(const std::vector<Tensor>& tensors, const std::string& path);

// Loads into already-constructed tensors; count or shape mismatch throws
// FormatError.
void load_parameters(const std::vector<Tensor>& tensors, const std::string& path);

}  // namespace spgat
