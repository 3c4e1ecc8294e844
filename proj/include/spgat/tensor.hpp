#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "spgat/errors.hpp"

namespace spgat {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);
std::vector<int64_t> row_major_strides(const Shape& shape);

// Throws NumericError if any value is NaN or Inf. `context` names the
// offending operation in the message.
void check_finite(std::span<const double> values, const char* context);

// Dense 64-bit tensor, row-major. Tensor is a shared handle: copies refer to
// the same storage, and that identity is what the autodiff tape records.
// Const-ness of a handle does not protect the storage (like shared_ptr);
// data_mut/grad_mut are usable through any copy.
//
// A gradient buffer of identical shape exists iff requires_grad() is true.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> values,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int64_t dim(int axis) const;
  int ndim() const;
  int64_t size() const;

  bool requires_grad() const;
  // Allocates a zeroed gradient buffer; no-op if already present.
  void enable_grad() const;
  void zero_grad() const;

  std::span<const double> data() const;
  std::span<double> data_mut() const;
  std::span<const double> grad() const;
  std::span<double> grad_mut() const;

  // Value of a single-element tensor.
  double value() const;

  uint64_t id() const;
  bool same_identity(const Tensor& other) const { return impl_ == other.impl_; }

  // Deep copy of the values; the clone never starts with a gradient buffer.
  Tensor clone() const;

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
};

}  // namespace spgat
