#include "spgat/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>
#include <utility>

namespace spgat {

namespace {
std::atomic<uint64_t> g_next_tensor_id{1};
}

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

std::vector<int64_t> row_major_strides(const Shape& shape) {
  std::vector<int64_t> strides(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
    strides[i] = strides[i + 1] * shape[i + 1];
  }
  return strides;
}

void check_finite(std::span<const double> values, const char* context) {
  for (size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(std::string(context) + ": non-finite value at flat index " +
                         std::to_string(i));
    }
  }
}

struct Tensor::Impl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty unless requires_grad
  bool requires_grad = false;
  uint64_t id = 0;
};

static void validate_shape(const Shape& shape) {
  for (int64_t d : shape) {
    if (d <= 0) {
      throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    }
  }
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  validate_shape(shape);
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->data.assign(static_cast<size_t>(numel(shape)), 0.0);
  t.impl_->shape = std::move(shape);
  t.impl_->id = g_next_tensor_id.fetch_add(1);
  if (requires_grad) t.enable_grad();
  return t;
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  if (!std::isfinite(value)) throw NumericError("Tensor::full: non-finite fill value");
  Tensor t = zeros(std::move(shape), requires_grad);
  for (double& v : t.impl_->data) v = value;
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad) {
  validate_shape(shape);
  if (numel(shape) != static_cast<int64_t>(values.size())) {
    throw ShapeError("Tensor::from_data: shape " + shape_str(shape) + " wants " +
                     std::to_string(numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  check_finite(values, "Tensor::from_data");
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(values);
  t.impl_->id = g_next_tensor_id.fetch_add(1);
  if (requires_grad) t.enable_grad();
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return impl_->shape; }

int64_t Tensor::dim(int axis) const { return impl_->shape.at(static_cast<size_t>(axis)); }

int Tensor::ndim() const { return static_cast<int>(impl_->shape.size()); }

int64_t Tensor::size() const { return static_cast<int64_t>(impl_->data.size()); }

bool Tensor::requires_grad() const { return impl_->requires_grad; }

void Tensor::enable_grad() const {
  if (impl_->requires_grad) return;
  impl_->requires_grad = true;
  impl_->grad.assign(impl_->data.size(), 0.0);
}

void Tensor::zero_grad() const {
  if (impl_->requires_grad) impl_->grad.assign(impl_->data.size(), 0.0);
}

std::span<const double> Tensor::data() const { return impl_->data; }

std::span<double> Tensor::data_mut() const { return impl_->data; }

std::span<const double> Tensor::grad() const {
  if (!impl_->requires_grad) {
    throw TapeError("Tensor::grad: tensor does not require grad");
  }
  return impl_->grad;
}

std::span<double> Tensor::grad_mut() const {
  if (!impl_->requires_grad) {
    throw TapeError("Tensor::grad_mut: tensor does not require grad");
  }
  return impl_->grad;
}

double Tensor::value() const {
  if (size() != 1) {
    throw ShapeError("Tensor::value: tensor has " + std::to_string(size()) +
                     " elements, expected 1");
  }
  return impl_->data[0];
}

uint64_t Tensor::id() const { return impl_->id; }

Tensor Tensor::clone() const {
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = impl_->shape;
  t.impl_->data = impl_->data;
  t.impl_->id = g_next_tensor_id.fetch_add(1);
  return t;
}

}  // namespace spgat
