#include "spgat/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

namespace spgat {

BatchNormState BatchNormState::init(int64_t channels) {
  BatchNormState s;
  s.running_mean = Tensor::zeros({channels});
  s.running_var = Tensor::full({channels}, 1.0);
  return s;
}

namespace ops {
namespace {

bool track(const Tape& tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape.recording()) return false;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

void record(Tape& tape, std::vector<Tensor> inputs, const Tensor& out,
            std::function<void()> fn) {
  out.enable_grad();
  tape.record(TapeNode{std::move(inputs), out, std::move(fn)});
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.defined() || !b.defined()) {
    throw ShapeError(std::string(op) + ": undefined operand");
  }
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": operand shapes differ, " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& t, int rank) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": undefined tensor");
  if (t.ndim() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got shape " + shape_str(t.shape()));
  }
}

int64_t prod_range(const Shape& s, size_t lo, size_t hi) {
  int64_t p = 1;
  for (size_t i = lo; i < hi; ++i) p *= s[i];
  return p;
}

}  // namespace

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  Tensor out = Tensor::zeros(a.shape());
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  double* od = out.data_mut().data();
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) od[i] = ad[i] + bd[i];
  check_finite(out.data(), "add");
  if (track(tape, {&a, &b})) {
    Tensor ac = a, bc = b, oc = out;
    record(tape, {a, b}, out, [ac, bc, oc, n]() {
      const double* og = oc.grad().data();
      if (ac.requires_grad()) {
        double* g = ac.grad_mut().data();
        for (int64_t i = 0; i < n; ++i) g[i] += og[i];
      }
      if (bc.requires_grad()) {
        double* g = bc.grad_mut().data();
        for (int64_t i = 0; i < n; ++i) g[i] += og[i];
      }
    });
  }
  return out;
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  Tensor out = Tensor::zeros(a.shape());
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  double* od = out.data_mut().data();
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) od[i] = ad[i] - bd[i];
  check_finite(out.data(), "sub");
  if (track(tape, {&a, &b})) {
    Tensor ac = a, bc = b, oc = out;
    record(tape, {a, b}, out, [ac, bc, oc, n]() {
      const double* og = oc.grad().data();
      if (ac.requires_grad()) {
        double* g = ac.grad_mut().data();
        for (int64_t i = 0; i < n; ++i) g[i] += og[i];
      }
      if (bc.requires_grad()) {
        double* g = bc.grad_mut().data();
        for (int64_t i = 0; i < n; ++i) g[i] -= og[i];
      }
    });
  }
  return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Tensor out = Tensor::zeros(a.shape());
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  double* od = out.data_mut().data();
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) od[i] = ad[i] * bd[i];
  check_finite(out.data(), "mul");
  if (track(tape, {&a, &b})) {
    Tensor ac = a, bc = b, oc = out;
    record(tape, {a, b}, out, [ac, bc, oc, n]() {
      const double* og = oc.grad().data();
      const double* ad2 = ac.data().data();
      const double* bd2 = bc.data().data();
      if (ac.requires_grad()) {
        double* g = ac.grad_mut().data();
        for (int64_t i = 0; i < n; ++i) g[i] += bd2[i] * og[i];
      }
      if (bc.requires_grad()) {
        double* g = bc.grad_mut().data();
        for (int64_t i = 0; i < n; ++i) g[i] += ad2[i] * og[i];
      }
    });
  }
  return out;
}

Tensor affine(Tape& tape, const Tensor& x, double scale, double shift) {
  if (!std::isfinite(scale) || !std::isfinite(shift)) {
    throw NumericError("affine: non-finite constants");
  }
  Tensor out = Tensor::zeros(x.shape());
  const double* xd = x.data().data();
  double* od = out.data_mut().data();
  const int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) od[i] = scale * xd[i] + shift;
  check_finite(out.data(), "affine");
  if (track(tape, {&x})) {
    Tensor xc = x, oc = out;
    record(tape, {x}, out, [xc, oc, scale, n]() {
      const double* og = oc.grad().data();
      double* g = xc.grad_mut().data();
      for (int64_t i = 0; i < n; ++i) g[i] += scale * og[i];
    });
  }
  return out;
}

Tensor leaky_relu(Tape& tape, const Tensor& x, double slope) {
  if (!(slope >= 0.0 && slope < 1.0)) {
    throw ConfigError("leaky_relu: slope must be in [0, 1), got " +
                      std::to_string(slope));
  }
  Tensor out = Tensor::zeros(x.shape());
  const double* xd = x.data().data();
  double* od = out.data_mut().data();
  const int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) od[i] = xd[i] >= 0.0 ? xd[i] : slope * xd[i];
  check_finite(out.data(), "leaky_relu");
  if (track(tape, {&x})) {
    Tensor xc = x, oc = out;
    record(tape, {x}, out, [xc, oc, slope, n]() {
      const double* og = oc.grad().data();
      const double* xd2 = xc.data().data();
      double* g = xc.grad_mut().data();
      for (int64_t i = 0; i < n; ++i) g[i] += (xd2[i] >= 0.0 ? 1.0 : slope) * og[i];
    });
  }
  return out;
}

Tensor relu(Tape& tape, const Tensor& x) { return leaky_relu(tape, x, 0.0); }

Tensor sigmoid(Tape& tape, const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const double* xd = x.data().data();
  double* od = out.data_mut().data();
  const int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) {
    const double v = xd[i];
    if (v >= 0.0) {
      od[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      od[i] = e / (1.0 + e);
    }
  }
  check_finite(out.data(), "sigmoid");
  if (track(tape, {&x})) {
    Tensor xc = x, oc = out;
    record(tape, {x}, out, [xc, oc, n]() {
      const double* og = oc.grad().data();
      const double* od2 = oc.data().data();
      double* g = xc.grad_mut().data();
      for (int64_t i = 0; i < n; ++i) g[i] += od2[i] * (1.0 - od2[i]) * og[i];
    });
  }
  return out;
}

Tensor abs(Tape& tape, const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const double* xd = x.data().data();
  double* od = out.data_mut().data();
  const int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) od[i] = std::fabs(xd[i]);
  check_finite(out.data(), "abs");
  if (track(tape, {&x})) {
    Tensor xc = x, oc = out;
    record(tape, {x}, out, [xc, oc, n]() {
      const double* og = oc.grad().data();
      const double* xd2 = xc.data().data();
      double* g = xc.grad_mut().data();
      for (int64_t i = 0; i < n; ++i) {
        const double s = xd2[i] > 0.0 ? 1.0 : (xd2[i] < 0.0 ? -1.0 : 0.0);
        g[i] += s * og[i];
      }
    });
  }
  return out;
}

Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  }
  Tensor out = Tensor::from_data(std::move(shape),
                                 std::vector<double>(x.data().begin(), x.data().end()));
  if (track(tape, {&x})) {
    Tensor xc = x, oc = out;
    const int64_t n = x.size();
    record(tape, {x}, out, [xc, oc, n]() {
      const double* og = oc.grad().data();
      double* g = xc.grad_mut().data();
      for (int64_t i = 0; i < n; ++i) g[i] += og[i];
    });
  }
  return out;
}

Tensor transpose(Tape& tape, const Tensor& x, std::vector<int> perm) {
  const int nd = x.ndim();
  if (static_cast<int>(perm.size()) != nd) {
    throw ShapeError("transpose: permutation size mismatch");
  }
  std::vector<bool> seen(static_cast<size_t>(nd), false);
  for (int p : perm) {
    if (p < 0 || p >= nd || seen[static_cast<size_t>(p)]) {
      throw ShapeError("transpose: invalid permutation");
    }
    seen[static_cast<size_t>(p)] = true;
  }
  Shape out_shape(static_cast<size_t>(nd));
  for (int i = 0; i < nd; ++i) out_shape[static_cast<size_t>(i)] = x.dim(perm[static_cast<size_t>(i)]);
  const auto in_strides = row_major_strides(x.shape());
  // Stride in the source for a unit step along each output axis.
  std::vector<int64_t> src_stride(static_cast<size_t>(nd));
  for (int i = 0; i < nd; ++i) src_stride[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(perm[static_cast<size_t>(i)])];

  Tensor out = Tensor::zeros(out_shape);
  const double* xd = x.data().data();
  double* od = out.data_mut().data();
  const int64_t n = x.size();
  std::vector<int64_t> idx(static_cast<size_t>(nd), 0);
  int64_t src = 0;
  for (int64_t flat = 0; flat < n; ++flat) {
    od[flat] = xd[src];
    for (int ax = nd - 1; ax >= 0; --ax) {
      idx[static_cast<size_t>(ax)]++;
      src += src_stride[static_cast<size_t>(ax)];
      if (idx[static_cast<size_t>(ax)] < out_shape[static_cast<size_t>(ax)]) break;
      src -= src_stride[static_cast<size_t>(ax)] * out_shape[static_cast<size_t>(ax)];
      idx[static_cast<size_t>(ax)] = 0;
    }
  }
  if (track(tape, {&x})) {
    Tensor xc = x, oc = out;
    record(tape, {x}, out, [xc, oc, out_shape, src_stride, nd, n]() {
      const double* og = oc.grad().data();
      double* g = xc.grad_mut().data();
      std::vector<int64_t> idx2(static_cast<size_t>(nd), 0);
      int64_t src2 = 0;
      for (int64_t flat = 0; flat < n; ++flat) {
        g[src2] += og[flat];
        for (int ax = nd - 1; ax >= 0; --ax) {
          idx2[static_cast<size_t>(ax)]++;
          src2 += src_stride[static_cast<size_t>(ax)];
          if (idx2[static_cast<size_t>(ax)] < out_shape[static_cast<size_t>(ax)]) break;
          src2 -= src_stride[static_cast<size_t>(ax)] * out_shape[static_cast<size_t>(ax)];
          idx2[static_cast<size_t>(ax)] = 0;
        }
      }
    });
  }
  return out;
}

Tensor broadcast_axis(Tape& tape, const Tensor& x, int axis, int64_t n) {
  if (axis < 0 || axis >= x.ndim()) throw ShapeError("broadcast_axis: axis out of range");
  if (x.dim(axis) != 1) {
    throw ShapeError("broadcast_axis: axis " + std::to_string(axis) +
                     " has extent " + std::to_string(x.dim(axis)) + ", expected 1");
  }
  if (n < 1) throw ShapeError("broadcast_axis: target extent must be positive");
  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(axis)] = n;
  const int64_t outer = prod_range(x.shape(), 0, static_cast<size_t>(axis));
  const int64_t inner = prod_range(x.shape(), static_cast<size_t>(axis) + 1, x.shape().size());
  Tensor out = Tensor::zeros(out_shape);
  const double* xd = x.data().data();
  double* od = out.data_mut().data();
  for (int64_t o = 0; o < outer; ++o) {
    const double* src = xd + o * inner;
    for (int64_t r = 0; r < n; ++r) {
      double* dst = od + (o * n + r) * inner;
      for (int64_t i = 0; i < inner; ++i) dst[i] = src[i];
    }
  }
  if (track(tape, {&x})) {
    Tensor xc = x, oc = out;
    record(tape, {x}, out, [xc, oc, outer, inner, n]() {
      const double* og = oc.grad().data();
      double* g = xc.grad_mut().data();
      for (int64_t o = 0; o < outer; ++o) {
        double* dst = g + o * inner;
        for (int64_t r = 0; r < n; ++r) {
          const double* src = og + (o * n + r) * inner;
          for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return out;
}

Tensor select_axis(Tape& tape, const Tensor& x, int axis, int64_t index) {
  if (axis < 0 || axis >= x.ndim()) throw ShapeError("select_axis: axis out of range");
  const int64_t extent = x.dim(axis);
  if (index < 0 || index >= extent) {
    throw ShapeError("select_axis: index " + std::to_string(index) +
                     " out of range for extent " + std::to_string(extent));
  }
  Shape out_shape;
  for (int i = 0; i < x.ndim(); ++i) {
    if (i != axis) out_shape.push_back(x.dim(i));
  }
  if (out_shape.empty()) out_shape.push_back(1);
  const int64_t outer = prod_range(x.shape(), 0, static_cast<size_t>(axis));
  const int64_t inner = prod_range(x.shape(), static_cast<size_t>(axis) + 1, x.shape().size());
  Tensor out = Tensor::zeros(out_shape);
  const double* xd = x.data().data();
  double* od = out.data_mut().data();
  for (int64_t o = 0; o < outer; ++o) {
    const double* src = xd + (o * extent + index) * inner;
    double* dst = od + o * inner;
    for (int64_t i = 0; i < inner; ++i) dst[i] = src[i];
  }
  if (track(tape, {&x})) {
    Tensor xc = x, oc = out;
    record(tape, {x}, out, [xc, oc, outer, inner, extent, index]() {
      const double* og = oc.grad().data();
      double* g = xc.grad_mut().data();
      for (int64_t o = 0; o < outer; ++o) {
        double* dst = g + (o * extent + index) * inner;
        const double* src = og + o * inner;
        for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

Tensor concat_last(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.ndim() != b.ndim()) throw ShapeError("concat_last: rank mismatch");
  for (int i = 0; i + 1 < a.ndim(); ++i) {
    if (a.dim(i) != b.dim(i)) {
      throw ShapeError("concat_last: leading dims differ, " + shape_str(a.shape()) +
                       " vs " + shape_str(b.shape()));
    }
  }
  const int64_t na = a.dim(a.ndim() - 1);
  const int64_t nb = b.dim(b.ndim() - 1);
  const int64_t rows = a.size() / na;
  Shape out_shape = a.shape();
  out_shape.back() = na + nb;
  Tensor out = Tensor::zeros(out_shape);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  double* od = out.data_mut().data();
  for (int64_t r = 0; r < rows; ++r) {
    double* dst = od + r * (na + nb);
    const double* sa = ad + r * na;
    const double* sb = bd + r * nb;
    for (int64_t i = 0; i < na; ++i) dst[i] = sa[i];
    for (int64_t i = 0; i < nb; ++i) dst[na + i] = sb[i];
  }
  if (track(tape, {&a, &b})) {
    Tensor ac = a, bc = b, oc = out;
    record(tape, {a, b}, out, [ac, bc, oc, rows, na, nb]() {
      const double* og = oc.grad().data();
      if (ac.requires_grad()) {
        double* g = ac.grad_mut().data();
        for (int64_t r = 0; r < rows; ++r) {
          const double* src = og + r * (na + nb);
          double* dst = g + r * na;
          for (int64_t i = 0; i < na; ++i) dst[i] += src[i];
        }
      }
      if (bc.requires_grad()) {
        double* g = bc.grad_mut().data();
        for (int64_t r = 0; r < rows; ++r) {
          const double* src = og + r * (na + nb) + na;
          double* dst = g + r * nb;
          for (int64_t i = 0; i < nb; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return out;
}

Tensor mean_axis(Tape& tape, const Tensor& x, int axis, bool keepdim) {
  if (axis < 0 || axis >= x.ndim()) throw ShapeError("mean_axis: axis out of range");
  const int64_t extent = x.dim(axis);
  const int64_t outer = prod_range(x.shape(), 0, static_cast<size_t>(axis));
  const int64_t inner = prod_range(x.shape(), static_cast<size_t>(axis) + 1, x.shape().size());
  Shape out_shape;
  for (int i = 0; i < x.ndim(); ++i) {
    if (i == axis) {
      if (keepdim) out_shape.push_back(1);
    } else {
      out_shape.push_back(x.dim(i));
    }
  }
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor out = Tensor::zeros(out_shape);
  const double* xd = x.data().data();
  double* od = out.data_mut().data();
  const double inv = 1.0 / static_cast<double>(extent);
  for (int64_t o = 0; o < outer; ++o) {
    double* dst = od + o * inner;
    for (int64_t e = 0; e < extent; ++e) {
      const double* src = xd + (o * extent + e) * inner;
      for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
    for (int64_t i = 0; i < inner; ++i) dst[i] *= inv;
  }
  check_finite(out.data(), "mean_axis");
  if (track(tape, {&x})) {
    Tensor xc = x, oc = out;
    record(tape, {x}, out, [xc, oc, outer, inner, extent, inv]() {
      const double* og = oc.grad().data();
      double* g = xc.grad_mut().data();
      for (int64_t o = 0; o < outer; ++o) {
        const double* src = og + o * inner;
        for (int64_t e = 0; e < extent; ++e) {
          double* dst = g + (o * extent + e) * inner;
          for (int64_t i = 0; i < inner; ++i) dst[i] += inv * src[i];
        }
      }
    });
  }
  return out;
}

Tensor sum_all(Tape& tape, const Tensor& x) {
  Tensor out = Tensor::zeros({1});
  const double* xd = x.data().data();
  double acc = 0.0;
  const int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) acc += xd[i];
  out.data_mut()[0] = acc;
  check_finite(out.data(), "sum_all");
  if (track(tape, {&x})) {
    Tensor xc = x, oc = out;
    record(tape, {x}, out, [xc, oc, n]() {
      const double og = oc.grad()[0];
      double* g = xc.grad_mut().data();
      for (int64_t i = 0; i < n; ++i) g[i] += og;
    });
  }
  return out;
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank("linear weight", weight, 2);
  const int64_t din = x.dim(x.ndim() - 1);
  const int64_t dout = weight.dim(0);
  if (weight.dim(1) != din) {
    throw ShapeError("linear: weight " + shape_str(weight.shape()) +
                     " does not match input " + shape_str(x.shape()));
  }
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != dout)) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not match Dout " +
                     std::to_string(dout));
  }
  Shape out_shape = x.shape();
  out_shape.back() = dout;
  const int64_t rows = x.size() / din;
  Tensor out = Tensor::zeros(out_shape);
  const double* xd = x.data().data();
  const double* wd = weight.data().data();
  const double* bd = bias.defined() ? bias.data().data() : nullptr;
  double* od = out.data_mut().data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = xd + r * din;
    double* yr = od + r * dout;
    for (int64_t o = 0; o < dout; ++o) {
      const double* wr = wd + o * din;
      double acc = bd ? bd[o] : 0.0;
      for (int64_t i = 0; i < din; ++i) acc += wr[i] * xr[i];
      yr[o] = acc;
    }
  }
  check_finite(out.data(), "linear");
  if (track(tape, {&x, &weight, &bias})) {
    Tensor xc = x, wc = weight, bc = bias, oc = out;
    std::vector<Tensor> inputs = {x, weight};
    if (bias.defined()) inputs.push_back(bias);
    record(tape, std::move(inputs), out, [xc, wc, bc, oc, rows, din, dout]() {
      const double* og = oc.grad().data();
      const double* xd2 = xc.data().data();
      const double* wd2 = wc.data().data();
      if (xc.requires_grad()) {
        double* g = xc.grad_mut().data();
        for (int64_t r = 0; r < rows; ++r) {
          const double* gy = og + r * dout;
          double* gx = g + r * din;
          for (int64_t o = 0; o < dout; ++o) {
            const double* wr = wd2 + o * din;
            const double gyo = gy[o];
            for (int64_t i = 0; i < din; ++i) gx[i] += gyo * wr[i];
          }
        }
      }
      if (wc.requires_grad()) {
        double* gw = wc.grad_mut().data();
        for (int64_t r = 0; r < rows; ++r) {
          const double* gy = og + r * dout;
          const double* xr = xd2 + r * din;
          for (int64_t o = 0; o < dout; ++o) {
            double* gwr = gw + o * din;
            const double gyo = gy[o];
            for (int64_t i = 0; i < din; ++i) gwr[i] += gyo * xr[i];
          }
        }
      }
      if (bc.defined() && bc.requires_grad()) {
        double* gb = bc.grad_mut().data();
        for (int64_t r = 0; r < rows; ++r) {
          const double* gy = og + r * dout;
          for (int64_t o = 0; o < dout; ++o) gb[o] += gy[o];
        }
      }
    });
  }
  return out;
}

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.ndim() < 2 || b.ndim() != a.ndim()) {
    throw ShapeError("matmul: ranks must match and be >= 2, got " +
                     shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const int nd = a.ndim();
  for (int i = 0; i < nd - 2; ++i) {
    if (a.dim(i) != b.dim(i)) {
      throw ShapeError("matmul: leading dims differ, " + shape_str(a.shape()) +
                       " x " + shape_str(b.shape()));
    }
  }
  const int64_t n = a.dim(nd - 2);
  const int64_t m = a.dim(nd - 1);
  const int64_t k = b.dim(nd - 1);
  if (b.dim(nd - 2) != m) {
    throw ShapeError("matmul: inner dims differ, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const int64_t batch = prod_range(a.shape(), 0, static_cast<size_t>(nd - 2));
  Shape out_shape = a.shape();
  out_shape[static_cast<size_t>(nd - 1)] = k;
  Tensor out = Tensor::zeros(out_shape);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  double* od = out.data_mut().data();
  for (int64_t bi = 0; bi < batch; ++bi) {
    const double* A = ad + bi * n * m;
    const double* B = bd + bi * m * k;
    double* Y = od + bi * n * k;
    for (int64_t i = 0; i < n; ++i) {
      double* yr = Y + i * k;
      const double* ar = A + i * m;
      for (int64_t l = 0; l < m; ++l) {
        const double av = ar[l];
        const double* br = B + l * k;
        for (int64_t j = 0; j < k; ++j) yr[j] += av * br[j];
      }
    }
  }
  check_finite(out.data(), "matmul");
  if (track(tape, {&a, &b})) {
    Tensor ac = a, bc = b, oc = out;
    record(tape, {a, b}, out, [ac, bc, oc, batch, n, m, k]() {
      const double* og = oc.grad().data();
      const double* ad2 = ac.data().data();
      const double* bd2 = bc.data().data();
      if (ac.requires_grad()) {
        double* ga = ac.grad_mut().data();
        for (int64_t bi = 0; bi < batch; ++bi) {
          const double* GY = og + bi * n * k;
          const double* B = bd2 + bi * m * k;
          double* GA = ga + bi * n * m;
          for (int64_t i = 0; i < n; ++i) {
            const double* gyr = GY + i * k;
            double* gar = GA + i * m;
            for (int64_t l = 0; l < m; ++l) {
              const double* br = B + l * k;
              double acc = 0.0;
              for (int64_t j = 0; j < k; ++j) acc += gyr[j] * br[j];
              gar[l] += acc;
            }
          }
        }
      }
      if (bc.requires_grad()) {
        double* gb = bc.grad_mut().data();
        for (int64_t bi = 0; bi < batch; ++bi) {
          const double* GY = og + bi * n * k;
          const double* A = ad2 + bi * n * m;
          double* GB = gb + bi * m * k;
          for (int64_t i = 0; i < n; ++i) {
            const double* gyr = GY + i * k;
            const double* ar = A + i * m;
            for (int64_t l = 0; l < m; ++l) {
              const double av = ar[l];
              double* gbr = GB + l * k;
              for (int64_t j = 0; j < k; ++j) gbr[j] += av * gyr[j];
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor atrous_conv_spectral(Tape& tape, const Tensor& input, const Tensor& weight,
                            const Tensor& bias, int64_t rate, PadMode pad) {
  require_rank("atrous_conv_spectral input", input, 5);
  require_rank("atrous_conv_spectral weight", weight, 3);
  require_rank("atrous_conv_spectral bias", bias, 1);
  if (rate < 1) throw ConfigError("atrous_conv_spectral: rate must be >= 1");
  const int64_t B = input.dim(0), cin = input.dim(1), S = input.dim(2);
  const int64_t H = input.dim(3), W = input.dim(4);
  const int64_t cout = weight.dim(0), K = weight.dim(2);
  if (weight.dim(1) != cin) {
    throw ShapeError("atrous_conv_spectral: weight expects " +
                     std::to_string(weight.dim(1)) + " input channels, input has " +
                     std::to_string(cin));
  }
  if (K % 2 == 0) throw ConfigError("atrous_conv_spectral: kernel length must be odd");
  if (bias.dim(0) != cout) {
    throw ShapeError("atrous_conv_spectral: bias extent " + std::to_string(bias.dim(0)) +
                     " != Cout " + std::to_string(cout));
  }
  const int64_t padlen = rate * (K - 1) / 2;
  const int64_t hw = H * W;
  Tensor out = Tensor::zeros({B, cout, S, H, W});
  const double* xd = input.data().data();
  const double* wd = weight.data().data();
  const double* bd = bias.data().data();
  double* od = out.data_mut().data();

  for (int64_t b = 0; b < B; ++b) {
    for (int64_t co = 0; co < cout; ++co) {
      double* ybase = od + ((b * cout + co) * S) * hw;
      const double bv = bd[co];
      for (int64_t i = 0; i < S * hw; ++i) ybase[i] = bv;
      for (int64_t ci = 0; ci < cin; ++ci) {
        const double* xbase = xd + ((b * cin + ci) * S) * hw;
        const double* wrow = wd + (co * cin + ci) * K;
        for (int64_t k = 0; k < K; ++k) {
          const double wv = wrow[k];
          const int64_t shift = rate * k - padlen;  // source = s_out + shift
          if (pad == PadMode::kZero) {
            const int64_t lo = std::max<int64_t>(0, -shift);
            const int64_t hi = std::min<int64_t>(S, S - shift);
            for (int64_t s = lo; s < hi; ++s) {
              double* yr = ybase + s * hw;
              const double* xr = xbase + (s + shift) * hw;
              for (int64_t p = 0; p < hw; ++p) yr[p] += wv * xr[p];
            }
          } else {
            for (int64_t s = 0; s < S; ++s) {
              int64_t src = (s + shift) % S;
              if (src < 0) src += S;
              double* yr = ybase + s * hw;
              const double* xr = xbase + src * hw;
              for (int64_t p = 0; p < hw; ++p) yr[p] += wv * xr[p];
            }
          }
        }
      }
    }
  }
  check_finite(out.data(), "atrous_conv_spectral");
  if (track(tape, {&input, &weight, &bias})) {
    Tensor xc = input, wc = weight, bc = bias, oc = out;
    record(tape, {input, weight, bias}, out,
           [xc, wc, bc, oc, B, cin, cout, S, hw, K, rate, padlen, pad]() {
      const double* og = oc.grad().data();
      const double* xd2 = xc.data().data();
      const double* wd2 = wc.data().data();
      const bool gx = xc.requires_grad();
      const bool gw = wc.requires_grad();
      double* gxd = gx ? xc.grad_mut().data() : nullptr;
      double* gwd = gw ? wc.grad_mut().data() : nullptr;
      if (bc.requires_grad()) {
        double* gbd = bc.grad_mut().data();
        for (int64_t b = 0; b < B; ++b) {
          for (int64_t co = 0; co < cout; ++co) {
            const double* gy = og + ((b * cout + co) * S) * hw;
            double acc = 0.0;
            for (int64_t i = 0; i < S * hw; ++i) acc += gy[i];
            gbd[co] += acc;
          }
        }
      }
      if (!gx && !gw) return;
      for (int64_t b = 0; b < B; ++b) {
        for (int64_t co = 0; co < cout; ++co) {
          const double* gybase = og + ((b * cout + co) * S) * hw;
          for (int64_t ci = 0; ci < cin; ++ci) {
            const double* xbase = xd2 + ((b * cin + ci) * S) * hw;
            double* gxbase = gx ? gxd + ((b * cin + ci) * S) * hw : nullptr;
            const double* wrow = wd2 + (co * cin + ci) * K;
            double* gwrow = gw ? gwd + (co * cin + ci) * K : nullptr;
            for (int64_t k = 0; k < K; ++k) {
              const double wv = wrow[k];
              const int64_t shift = rate * k - padlen;
              double wacc = 0.0;
              if (pad == PadMode::kZero) {
                const int64_t lo = std::max<int64_t>(0, -shift);
                const int64_t hi = std::min<int64_t>(S, S - shift);
                for (int64_t s = lo; s < hi; ++s) {
                  const double* gyr = gybase + s * hw;
                  const double* xr = xbase + (s + shift) * hw;
                  if (gx) {
                    double* gxr = gxbase + (s + shift) * hw;
                    for (int64_t p = 0; p < hw; ++p) gxr[p] += wv * gyr[p];
                  }
                  if (gw) {
                    for (int64_t p = 0; p < hw; ++p) wacc += gyr[p] * xr[p];
                  }
                }
              } else {
                for (int64_t s = 0; s < S; ++s) {
                  int64_t src = (s + shift) % S;
                  if (src < 0) src += S;
                  const double* gyr = gybase + s * hw;
                  const double* xr = xbase + src * hw;
                  if (gx) {
                    double* gxr = gxbase + src * hw;
                    for (int64_t p = 0; p < hw; ++p) gxr[p] += wv * gyr[p];
                  }
                  if (gw) {
                    for (int64_t p = 0; p < hw; ++p) wacc += gyr[p] * xr[p];
                  }
                }
              }
              if (gw) gwrow[k] += wacc;
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor conv_pointwise(Tape& tape, const Tensor& input, const Tensor& weight,
                      const Tensor& bias) {
  if (input.ndim() < 3) {
    throw ShapeError("conv_pointwise: input must have rank >= 3, got " +
                     shape_str(input.shape()));
  }
  require_rank("conv_pointwise weight", weight, 2);
  require_rank("conv_pointwise bias", bias, 1);
  const int64_t B = input.dim(0), cin = input.dim(1);
  const int64_t rest = prod_range(input.shape(), 2, input.shape().size());
  const int64_t cout = weight.dim(0);
  if (weight.dim(1) != cin) {
    throw ShapeError("conv_pointwise: weight expects " + std::to_string(weight.dim(1)) +
                     " input channels, input has " + std::to_string(cin));
  }
  if (bias.dim(0) != cout) {
    throw ShapeError("conv_pointwise: bias extent " + std::to_string(bias.dim(0)) +
                     " != Cout " + std::to_string(cout));
  }
  Shape out_shape = input.shape();
  out_shape[1] = cout;
  Tensor out = Tensor::zeros(out_shape);
  const double* xd = input.data().data();
  const double* wd = weight.data().data();
  const double* bd = bias.data().data();
  double* od = out.data_mut().data();
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t co = 0; co < cout; ++co) {
      double* yr = od + (b * cout + co) * rest;
      const double bv = bd[co];
      for (int64_t p = 0; p < rest; ++p) yr[p] = bv;
      const double* wrow = wd + co * cin;
      for (int64_t ci = 0; ci < cin; ++ci) {
        const double wv = wrow[ci];
        const double* xr = xd + (b * cin + ci) * rest;
        for (int64_t p = 0; p < rest; ++p) yr[p] += wv * xr[p];
      }
    }
  }
  check_finite(out.data(), "conv_pointwise");
  if (track(tape, {&input, &weight, &bias})) {
    Tensor xc = input, wc = weight, bc = bias, oc = out;
    record(tape, {input, weight, bias}, out, [xc, wc, bc, oc, B, cin, cout, rest]() {
      const double* og = oc.grad().data();
      const double* xd2 = xc.data().data();
      const double* wd2 = wc.data().data();
      if (bc.requires_grad()) {
        double* gb = bc.grad_mut().data();
        for (int64_t b = 0; b < B; ++b) {
          for (int64_t co = 0; co < cout; ++co) {
            const double* gy = og + (b * cout + co) * rest;
            double acc = 0.0;
            for (int64_t p = 0; p < rest; ++p) acc += gy[p];
            gb[co] += acc;
          }
        }
      }
      if (xc.requires_grad()) {
        double* gx = xc.grad_mut().data();
        for (int64_t b = 0; b < B; ++b) {
          for (int64_t co = 0; co < cout; ++co) {
            const double* gy = og + (b * cout + co) * rest;
            const double* wrow = wd2 + co * cin;
            for (int64_t ci = 0; ci < cin; ++ci) {
              const double wv = wrow[ci];
              double* gxr = gx + (b * cin + ci) * rest;
              for (int64_t p = 0; p < rest; ++p) gxr[p] += wv * gy[p];
            }
          }
        }
      }
      if (wc.requires_grad()) {
        double* gw = wc.grad_mut().data();
        for (int64_t b = 0; b < B; ++b) {
          for (int64_t co = 0; co < cout; ++co) {
            const double* gy = og + (b * cout + co) * rest;
            double* gwrow = gw + co * cin;
            for (int64_t ci = 0; ci < cin; ++ci) {
              const double* xr = xd2 + (b * cin + ci) * rest;
              double acc = 0.0;
              for (int64_t p = 0; p < rest; ++p) acc += gy[p] * xr[p];
              gwrow[ci] += acc;
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor batch_norm(Tape& tape, const Tensor& input, const Tensor& gamma,
                  const Tensor& beta, BatchNormState& state, BatchNormMode mode,
                  double eps, double momentum) {
  if (input.ndim() < 2) {
    throw ShapeError("batch_norm: input must have rank >= 2, got " +
                     shape_str(input.shape()));
  }
  const int64_t B = input.dim(0);
  const int64_t C = input.dim(1);
  const int64_t rest = prod_range(input.shape(), 2, input.shape().size());
  const int64_t count = B * rest;  // elements per channel
  auto check_c = [&](const Tensor& t, const char* what) {
    if (!t.defined()) {
      throw ShapeError(std::string("batch_norm: ") + what + " is undefined");
    }
    if (t.ndim() != 1 || t.dim(0) != C) {
      throw ShapeError(std::string("batch_norm: ") + what + " must be [C]=" +
                       std::to_string(C) + ", got " + shape_str(t.shape()));
    }
  };
  check_c(gamma, "gamma");
  check_c(beta, "beta");
  check_c(state.running_mean, "running_mean");
  check_c(state.running_var, "running_var");

  const double* xd = input.data().data();
  const double* gd = gamma.data().data();
  const double* betad = beta.data().data();

  std::vector<double> mean(static_cast<size_t>(C), 0.0);
  std::vector<double> invstd(static_cast<size_t>(C), 0.0);

  if (mode == BatchNormMode::kTrain) {
    if (count < 2) {
      throw NumericError("batch_norm: train mode needs >= 2 elements per channel, got " +
                         std::to_string(count));
    }
    for (int64_t c = 0; c < C; ++c) {
      double acc = 0.0;
      for (int64_t b = 0; b < B; ++b) {
        const double* xr = xd + (b * C + c) * rest;
        for (int64_t p = 0; p < rest; ++p) acc += xr[p];
      }
      mean[static_cast<size_t>(c)] = acc / static_cast<double>(count);
    }
    double* rm = state.running_mean.data_mut().data();
    double* rv = state.running_var.data_mut().data();
    for (int64_t c = 0; c < C; ++c) {
      const double mu = mean[static_cast<size_t>(c)];
      double acc = 0.0;
      for (int64_t b = 0; b < B; ++b) {
        const double* xr = xd + (b * C + c) * rest;
        for (int64_t p = 0; p < rest; ++p) {
          const double d = xr[p] - mu;
          acc += d * d;
        }
      }
      const double var = acc / static_cast<double>(count);  // biased
      invstd[static_cast<size_t>(c)] = 1.0 / std::sqrt(var + eps);
      rm[c] = (1.0 - momentum) * rm[c] + momentum * mu;
      rv[c] = (1.0 - momentum) * rv[c] + momentum * var;
    }
    check_finite(state.running_mean.data(), "batch_norm running_mean");
    check_finite(state.running_var.data(), "batch_norm running_var");
  } else {
    const double* rm = state.running_mean.data().data();
    const double* rv = state.running_var.data().data();
    for (int64_t c = 0; c < C; ++c) {
      mean[static_cast<size_t>(c)] = rm[c];
      invstd[static_cast<size_t>(c)] = 1.0 / std::sqrt(rv[c] + eps);
    }
  }

  Tensor out = Tensor::zeros(input.shape());
  double* od = out.data_mut().data();
  std::vector<double> xhat(static_cast<size_t>(input.size()));
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t c = 0; c < C; ++c) {
      const double mu = mean[static_cast<size_t>(c)];
      const double is = invstd[static_cast<size_t>(c)];
      const double gv = gd[c];
      const double bv = betad[c];
      const int64_t base = (b * C + c) * rest;
      const double* xr = xd + base;
      double* yr = od + base;
      double* hr = xhat.data() + base;
      for (int64_t p = 0; p < rest; ++p) {
        const double h = (xr[p] - mu) * is;
        hr[p] = h;
        yr[p] = gv * h + bv;
      }
    }
  }
  check_finite(out.data(), "batch_norm");

  if (track(tape, {&input, &gamma, &beta})) {
    Tensor xc = input, gc = gamma, bc = beta, oc = out;
    const bool train = mode == BatchNormMode::kTrain;
    record(tape, {input, gamma, beta}, out,
           [xc, gc, bc, oc, B, C, rest, count, train, xhat = std::move(xhat),
            invstd = std::move(invstd)]() {
      const double* og = oc.grad().data();
      const double* gd2 = gc.data().data();
      // Per-channel sums of dy and dy*xhat feed both the affine-parameter
      // gradients and (in train mode) the batch-statistics terms of dx.
      std::vector<double> sum_dy(static_cast<size_t>(C), 0.0);
      std::vector<double> sum_dy_xhat(static_cast<size_t>(C), 0.0);
      for (int64_t c = 0; c < C; ++c) {
        double s1 = 0.0, s2 = 0.0;
        for (int64_t b = 0; b < B; ++b) {
          const int64_t base = (b * C + c) * rest;
          const double* gy = og + base;
          const double* hr = xhat.data() + base;
          for (int64_t p = 0; p < rest; ++p) {
            s1 += gy[p];
            s2 += gy[p] * hr[p];
          }
        }
        sum_dy[static_cast<size_t>(c)] = s1;
        sum_dy_xhat[static_cast<size_t>(c)] = s2;
      }
      if (gc.requires_grad()) {
        double* gg = gc.grad_mut().data();
        for (int64_t c = 0; c < C; ++c) gg[c] += sum_dy_xhat[static_cast<size_t>(c)];
      }
      if (bc.requires_grad()) {
        double* gb = bc.grad_mut().data();
        for (int64_t c = 0; c < C; ++c) gb[c] += sum_dy[static_cast<size_t>(c)];
      }
      if (xc.requires_grad()) {
        double* gx = xc.grad_mut().data();
        const double invn = 1.0 / static_cast<double>(count);
        for (int64_t b = 0; b < B; ++b) {
          for (int64_t c = 0; c < C; ++c) {
            const double scale = gd2[c] * invstd[static_cast<size_t>(c)];
            const double m_dy = sum_dy[static_cast<size_t>(c)] * invn;
            const double m_dyh = sum_dy_xhat[static_cast<size_t>(c)] * invn;
            const int64_t base = (b * C + c) * rest;
            const double* gy = og + base;
            const double* hr = xhat.data() + base;
            double* gxr = gx + base;
            if (train) {
              for (int64_t p = 0; p < rest; ++p) {
                gxr[p] += scale * (gy[p] - m_dy - hr[p] * m_dyh);
              }
            } else {
              for (int64_t p = 0; p < rest; ++p) gxr[p] += scale * gy[p];
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor adaptive_avg_pool_spectral(Tape& tape, const Tensor& input) {
  require_rank("adaptive_avg_pool_spectral", input, 5);
  return mean_axis(tape, input, 2, /*keepdim=*/true);
}

Tensor softmax(Tape& tape, const Tensor& x) {
  const int64_t n = x.dim(x.ndim() - 1);
  const int64_t rows = x.size() / n;
  Tensor out = Tensor::zeros(x.shape());
  const double* xd = x.data().data();
  double* od = out.data_mut().data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = xd + r * n;
    double* yr = od + r * n;
    double m = xr[0];
    for (int64_t i = 1; i < n; ++i) m = std::max(m, xr[i]);
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      yr[i] = std::exp(xr[i] - m);
      s += yr[i];
    }
    const double inv = 1.0 / s;
    for (int64_t i = 0; i < n; ++i) yr[i] *= inv;
  }
  check_finite(out.data(), "softmax");
  if (track(tape, {&x})) {
    Tensor xc = x, oc = out;
    record(tape, {x}, out, [xc, oc, rows, n]() {
      const double* og = oc.grad().data();
      const double* yd = oc.data().data();
      double* g = xc.grad_mut().data();
      for (int64_t r = 0; r < rows; ++r) {
        const double* gy = og + r * n;
        const double* yr = yd + r * n;
        double* gx = g + r * n;
        double dot = 0.0;
        for (int64_t i = 0; i < n; ++i) dot += gy[i] * yr[i];
        for (int64_t i = 0; i < n; ++i) gx[i] += yr[i] * (gy[i] - dot);
      }
    });
  }
  return out;
}

Tensor cross_entropy(Tape& tape, const Tensor& logits,
                     std::span<const int64_t> labels) {
  require_rank("cross_entropy logits", logits, 2);
  const int64_t B = logits.dim(0);
  const int64_t C = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != B) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) +
                     " labels for batch of " + std::to_string(B));
  }
  for (int64_t r = 0; r < B; ++r) {
    if (labels[static_cast<size_t>(r)] < 0 || labels[static_cast<size_t>(r)] >= C) {
      throw LabelError("cross_entropy: label " +
                       std::to_string(labels[static_cast<size_t>(r)]) + " at row " +
                       std::to_string(r) + " outside [0, " + std::to_string(C) + ")");
    }
  }
  const double* xd = logits.data().data();
  std::vector<double> probs(static_cast<size_t>(B * C));
  double total = 0.0;
  for (int64_t r = 0; r < B; ++r) {
    const double* xr = xd + r * C;
    double m = xr[0];
    for (int64_t i = 1; i < C; ++i) m = std::max(m, xr[i]);
    double s = 0.0;
    for (int64_t i = 0; i < C; ++i) s += std::exp(xr[i] - m);
    const double lse = m + std::log(s);
    total += lse - xr[labels[static_cast<size_t>(r)]];
    double* pr = probs.data() + r * C;
    for (int64_t i = 0; i < C; ++i) pr[i] = std::exp(xr[i] - lse);
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(B));
  check_finite(out.data(), "cross_entropy");
  if (track(tape, {&logits})) {
    Tensor xc = logits, oc = out;
    std::vector<int64_t> lab(labels.begin(), labels.end());
    record(tape, {logits}, out,
           [xc, oc, B, C, probs = std::move(probs), lab = std::move(lab)]() {
      const double og = oc.grad()[0];
      const double scale = og / static_cast<double>(B);
      double* g = xc.grad_mut().data();
      for (int64_t r = 0; r < B; ++r) {
        const double* pr = probs.data() + r * C;
        double* gr = g + r * C;
        for (int64_t i = 0; i < C; ++i) gr[i] += scale * pr[i];
        gr[lab[static_cast<size_t>(r)]] -= scale;
      }
    });
  }
  return out;
}

}  // namespace ops
}  // namespace spgat
