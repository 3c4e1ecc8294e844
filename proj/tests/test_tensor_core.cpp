#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numeric>
#include <vector>

#include "oracles.hpp"
#include "spgat/adam.hpp"
#include "spgat/gradcheck.hpp"
#include "spgat/ops.hpp"
#include "spgat/rng.hpp"
#include "spgat/tape.hpp"
#include "spgat/tensor.hpp"

using namespace spgat;

namespace {

Tensor rand_tensor(Rng& rng, Shape shape, bool requires_grad, double lo = -1.0,
                   double hi = 1.0) {
  std::vector<double> v(static_cast<size_t>(numel(shape)));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

// Magnitudes in [0.3, 1.3]: keeps finite differences away from the kinks of
// leaky_relu / abs.
Tensor rand_away_from_zero(Rng& rng, Shape shape, bool requires_grad) {
  std::vector<double> v(static_cast<size_t>(numel(shape)));
  for (double& x : v) {
    const double mag = rng.uniform(0.3, 1.3);
    x = rng.uniform() < 0.5 ? -mag : mag;
  }
  return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

// loss = sum(y * r) gives every output coordinate a distinct pull.
Tensor weighted_sum(Tape& tape, const Tensor& y, const Tensor& r) {
  return ops::sum_all(tape, ops::mul(tape, y, r));
}

std::vector<double> to_vec(const Tensor& t) {
  return std::vector<double>(t.data().begin(), t.data().end());
}

void expect_close(const Tensor& got, const std::vector<double>& want, double tol) {
  REQUIRE(got.size() == static_cast<int64_t>(want.size()));
  for (size_t i = 0; i < want.size(); ++i) {
    CAPTURE(i);
    CHECK(std::fabs(got.data()[i] - want[i]) <= tol);
  }
}

}  // namespace

TEST_CASE("tensor construction and invariants") {
  Tensor t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.size() == 6);
  CHECK(t.ndim() == 2);
  CHECK(t.dim(1) == 3);
  CHECK_FALSE(t.requires_grad());
  CHECK_THROWS_AS(t.grad(), TapeError);

  Tensor c = t.clone();
  CHECK(c.data()[4] == 5.0);
  CHECK_FALSE(c.same_identity(t));
  c.data_mut()[0] = 99.0;
  CHECK(t.data()[0] == 1.0);

  Tensor alias = t;
  alias.data_mut()[0] = 7.0;
  CHECK(t.data()[0] == 7.0);
  CHECK(alias.same_identity(t));

  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor::from_data({2}, {1.0, std::nan("")}), NumericError);
  CHECK_THROWS_AS(Tensor::zeros({0, 3}), ShapeError);

  Tensor g = Tensor::zeros({2}, true);
  CHECK(g.requires_grad());
  CHECK(g.grad().size() == 2);
}

TEST_CASE("rng determinism and distribution contracts") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng c(42), d(43);
  bool differs = false;
  for (int i = 0; i < 10; ++i) differs |= (c.next_u64() != d.next_u64());
  CHECK(differs);

  Rng r(7);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  for (int i = 0; i < 1000; ++i) {
    const uint64_t v = r.below(13);
    CHECK(v < 13);
  }
  for (int i = 0; i < 100; ++i) CHECK(std::isfinite(r.normal(0.0, 1.0)));

  std::vector<int> perm(20);
  std::iota(perm.begin(), perm.end(), 0);
  Rng s(11);
  s.shuffle(perm);
  std::vector<int> sorted = perm;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 20; ++i) CHECK(sorted[static_cast<size_t>(i)] == i);

  CHECK(Rng::derive(5, 0) != Rng::derive(5, 1));
  CHECK(Rng::derive(5, 0) != Rng::derive(6, 0));
}

TEST_CASE("elementwise forward definitions") {
  Tape tape(false);
  Tensor x = Tensor::from_data({3}, {-1.0, 0.0, 2.0});

  expect_close(ops::leaky_relu(tape, x, 0.2), {-0.2, 0.0, 2.0}, 0.0);
  expect_close(ops::relu(tape, Tensor::from_data({2}, {-3.0, 4.0})), {0.0, 4.0}, 0.0);
  CHECK_THROWS_AS(ops::leaky_relu(tape, x, 1.0), ConfigError);
  CHECK_THROWS_AS(ops::leaky_relu(tape, x, -0.1), ConfigError);

  Tensor y = Tensor::from_data({3}, {4.0, -2.0, 0.5});
  expect_close(ops::add(tape, x, y), {3.0, -2.0, 2.5}, 0.0);
  expect_close(ops::sub(tape, x, y), {-5.0, 2.0, 1.5}, 0.0);
  expect_close(ops::mul(tape, x, y), {-4.0, 0.0, 1.0}, 0.0);
  expect_close(ops::affine(tape, x, 2.0, 1.0), {-1.0, 1.0, 5.0}, 0.0);
  expect_close(ops::abs(tape, x), {1.0, 0.0, 2.0}, 0.0);

  Tensor z = Tensor::from_data({3}, {0.0, 100.0, -100.0});
  Tensor sz = ops::sigmoid(tape, z);
  CHECK(sz.data()[0] == 0.5);
  CHECK(sz.data()[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(sz.data()[2] == doctest::Approx(0.0).epsilon(1e-12));

  CHECK_THROWS_AS(ops::add(tape, x, Tensor::from_data({2}, {1, 2})), ShapeError);

  Tensor big = Tensor::from_data({1}, {1e300});
  CHECK_THROWS_AS(ops::mul(tape, big, big), NumericError);
}

TEST_CASE("backward fundamentals") {
  SUBCASE("sum gives all-ones") {
    Tape tape;
    Tensor x = Tensor::from_data({4}, {1, 2, 3, 4}, true);
    Tensor loss = ops::sum_all(tape, x);
    tape.backward(loss);
    expect_close(Tensor::from_data({4}, to_vec(x)), {1, 2, 3, 4}, 0.0);
    for (double g : x.grad()) CHECK(g == 1.0);
  }
  SUBCASE("sum of squares") {
    Tape tape;
    Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
    Tensor loss = ops::sum_all(tape, ops::mul(tape, x, x));
    tape.backward(loss);
    CHECK(x.grad()[0] == 2.0);
    CHECK(x.grad()[1] == 4.0);
  }
  SUBCASE("fan-out sums") {
    Tape tape;
    Tensor x = Tensor::from_data({2}, {3.0, -1.0}, true);
    Tensor loss = ops::sum_all(tape, ops::add(tape, x, x));
    tape.backward(loss);
    CHECK(x.grad()[0] == 2.0);
    CHECK(x.grad()[1] == 2.0);
  }
  SUBCASE("loss not on tape") {
    Tape tape;
    Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
    Tensor loss = Tensor::scalar(0.0, true);
    CHECK_THROWS_AS(tape.backward(loss), TapeError);
  }
  SUBCASE("non-scalar loss") {
    Tape tape;
    Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
    Tensor y = ops::mul(tape, x, x);
    CHECK_THROWS_AS(tape.backward(y), TapeError);
  }
  SUBCASE("backward twice accumulates from fresh zeros") {
    Tape tape;
    Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
    Tensor loss = ops::sum_all(tape, ops::mul(tape, x, x));
    tape.backward(loss);
    tape.backward(loss);
    CHECK(x.grad()[0] == 2.0);
    CHECK(x.grad()[1] == 4.0);
  }
  SUBCASE("non-recording tape stays empty") {
    Tape tape(false);
    Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
    Tensor y = ops::mul(tape, x, x);
    CHECK(tape.size() == 0);
    CHECK_FALSE(y.requires_grad());
  }
}

TEST_CASE("shape ops forward") {
  Tape tape(false);
  Tensor x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});

  Tensor r = ops::reshape(tape, x, {3, 2});
  CHECK(r.dim(0) == 3);
  expect_close(r, {1, 2, 3, 4, 5, 6}, 0.0);
  CHECK_THROWS_AS(ops::reshape(tape, x, {4, 2}), ShapeError);

  Tensor t = ops::transpose(tape, x, {1, 0});
  CHECK(t.dim(0) == 3);
  expect_close(t, {1, 4, 2, 5, 3, 6}, 0.0);
  CHECK_THROWS_AS(ops::transpose(tape, x, {0, 0}), ShapeError);
  CHECK_THROWS_AS(ops::transpose(tape, x, {0}), ShapeError);

  // 3-axis permutation against manual index mapping.
  Rng rng(3);
  Tensor c = rand_tensor(rng, {2, 3, 4}, false);
  Tensor ct = ops::transpose(tape, c, {2, 0, 1});
  for (int64_t i = 0; i < 2; ++i)
    for (int64_t j = 0; j < 3; ++j)
      for (int64_t k = 0; k < 4; ++k)
        CHECK(ct.data()[static_cast<size_t>((k * 2 + i) * 3 + j)] ==
              c.data()[static_cast<size_t>((i * 3 + j) * 4 + k)]);

  Tensor ones = Tensor::from_data({2, 1, 2}, {1, 2, 3, 4});
  Tensor b = ops::broadcast_axis(tape, ones, 1, 3);
  CHECK(b.shape() == Shape{2, 3, 2});
  expect_close(b, {1, 2, 1, 2, 1, 2, 3, 4, 3, 4, 3, 4}, 0.0);
  CHECK_THROWS_AS(ops::broadcast_axis(tape, x, 0, 5), ShapeError);

  Tensor s = ops::select_axis(tape, x, 1, 2);
  CHECK(s.shape() == Shape{2});
  expect_close(s, {3, 6}, 0.0);
  CHECK_THROWS_AS(ops::select_axis(tape, x, 1, 3), ShapeError);

  Tensor cc = ops::concat_last(tape, x, x);
  CHECK(cc.shape() == Shape{2, 6});
  expect_close(cc, {1, 2, 3, 1, 2, 3, 4, 5, 6, 4, 5, 6}, 0.0);

  Tensor m = ops::mean_axis(tape, x, 1, false);
  expect_close(m, {2.0, 5.0}, 1e-15);
  Tensor mk = ops::mean_axis(tape, x, 0, true);
  CHECK(mk.shape() == Shape{1, 3});
  expect_close(mk, {2.5, 3.5, 4.5}, 1e-15);
}

TEST_CASE("linear matches definitions and loop oracle") {
  Tape tape(false);
  Tensor x = Tensor::from_data({2}, {3.0, 1.0});
  Tensor w = Tensor::from_data({1, 2}, {1.0, -1.0});
  Tensor y = ops::linear(tape, x, w, Tensor());
  expect_close(y, {2.0}, 0.0);

  Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor zb = Tensor::zeros({2});
  expect_close(ops::linear(tape, x, eye, zb), {3.0, 1.0}, 0.0);

  Rng rng(19);
  Tensor xx = rand_tensor(rng, {3, 4, 5}, false);
  Tensor ww = rand_tensor(rng, {2, 5}, false);
  Tensor bb = rand_tensor(rng, {2}, false);
  Tensor yy = ops::linear(tape, xx, ww, bb);
  REQUIRE(yy.shape() == Shape{3, 4, 2});
  for (int64_t rrow = 0; rrow < 12; ++rrow)
    for (int64_t o = 0; o < 2; ++o) {
      double acc = bb.data()[static_cast<size_t>(o)];
      for (int64_t i = 0; i < 5; ++i)
        acc += ww.data()[static_cast<size_t>(o * 5 + i)] *
               xx.data()[static_cast<size_t>(rrow * 5 + i)];
      CHECK(std::fabs(yy.data()[static_cast<size_t>(rrow * 2 + o)] - acc) < 1e-12);
    }

  CHECK_THROWS_AS(ops::linear(tape, x, Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}),
                              Tensor()),
                  ShapeError);
}

TEST_CASE("matmul hand case, batching, and gradients") {
  Tape tape(false);
  Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b = Tensor::from_data({3, 2}, {7, 8, 9, 10, 11, 12});
  expect_close(ops::matmul(tape, a, b), {58, 64, 139, 154}, 0.0);

  Rng rng(23);
  Tensor ba = rand_tensor(rng, {2, 2, 3}, false);
  Tensor bb = rand_tensor(rng, {2, 3, 2}, false);
  Tensor by = ops::matmul(tape, ba, bb);
  REQUIRE(by.shape() == Shape{2, 2, 2});
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t i = 0; i < 2; ++i)
      for (int64_t j = 0; j < 2; ++j) {
        double acc = 0.0;
        for (int64_t l = 0; l < 3; ++l)
          acc += ba.data()[static_cast<size_t>((n * 2 + i) * 3 + l)] *
                 bb.data()[static_cast<size_t>((n * 3 + l) * 2 + j)];
        CHECK(std::fabs(by.data()[static_cast<size_t>((n * 2 + i) * 2 + j)] - acc) <
              1e-12);
      }

  CHECK_THROWS_AS(ops::matmul(tape, a, a), ShapeError);
  CHECK_THROWS_AS(
      ops::matmul(tape, ba, rand_tensor(rng, {3, 3, 2}, false)), ShapeError);
}

TEST_CASE("atrous spectral convolution") {
  Tape tape(false);
  SUBCASE("identity kernel passes input through") {
    Rng rng(4);
    Tensor x = rand_tensor(rng, {2, 3, 6, 2, 2}, false);
    Tensor w = Tensor::zeros({3, 3, 3});
    for (int64_t co = 0; co < 3; ++co)
      w.data_mut()[static_cast<size_t>((co * 3 + co) * 3 + 1)] = 1.0;
    Tensor bias = Tensor::zeros({3});
    for (int64_t rate : {1, 2, 5}) {
      Tensor y = ops::atrous_conv_spectral(tape, x, w, bias, rate);
      expect_close(y, to_vec(x), 0.0);
    }
  }
  SUBCASE("hand-expanded rate-2 case") {
    Tensor x = Tensor::from_data({1, 1, 5, 1, 1}, {1, 2, 3, 4, 5});
    Tensor w = Tensor::from_data({1, 1, 3}, {1, 0, 1});
    Tensor bias = Tensor::zeros({1});
    Tensor y = ops::atrous_conv_spectral(tape, x, w, bias, 2);
    expect_close(y, {3, 4, 6, 2, 3}, 0.0);
  }
  SUBCASE("matches padded triple-loop reference at tight tolerance") {
    Rng rng(31);
    for (int64_t rate : {1, 2, 3, 12}) {
      oracles::ConvDims d{2, 3, 4, 9, 2, 3, 3};
      Tensor x = rand_tensor(rng, {d.b, d.cin, d.s, d.h, d.w}, false);
      Tensor w = rand_tensor(rng, {d.cout, d.cin, d.k}, false);
      Tensor bias = rand_tensor(rng, {d.cout}, false);
      Tensor y = ops::atrous_conv_spectral(tape, x, w, bias, rate);
      auto ref = oracles::atrous_conv_reference(to_vec(x), to_vec(w), to_vec(bias),
                                                d, rate);
      expect_close(y, ref, 1e-12);
    }
  }
  SUBCASE("rate larger than spectral extent still matches reference") {
    Rng rng(37);
    oracles::ConvDims d{1, 2, 2, 4, 2, 2, 3};
    Tensor x = rand_tensor(rng, {d.b, d.cin, d.s, d.h, d.w}, false);
    Tensor w = rand_tensor(rng, {d.cout, d.cin, d.k}, false);
    Tensor bias = rand_tensor(rng, {d.cout}, false);
    for (int64_t rate : {6, 11}) {
      Tensor y = ops::atrous_conv_spectral(tape, x, w, bias, rate);
      auto ref = oracles::atrous_conv_reference(to_vec(x), to_vec(w), to_vec(bias),
                                                d, rate);
      expect_close(y, ref, 1e-12);
    }
  }
  SUBCASE("circular padding matches reference and commutes with rotation") {
    Rng rng(41);
    oracles::ConvDims d{1, 2, 3, 7, 2, 2, 3};
    Tensor x = rand_tensor(rng, {d.b, d.cin, d.s, d.h, d.w}, false);
    Tensor w = rand_tensor(rng, {d.cout, d.cin, d.k}, false);
    Tensor bias = rand_tensor(rng, {d.cout}, false);
    Tensor y = ops::atrous_conv_spectral(tape, x, w, bias, 2, PadMode::kCircular);
    auto ref = oracles::atrous_conv_reference(to_vec(x), to_vec(w), to_vec(bias), d,
                                              2, true);
    expect_close(y, ref, 1e-12);

    // Rotate the spectrum by one slot; circular conv must rotate with it.
    const int64_t hw = d.h * d.w;
    Tensor xr = Tensor::zeros(x.shape());
    for (int64_t c = 0; c < d.cin; ++c)
      for (int64_t s = 0; s < d.s; ++s)
        for (int64_t p = 0; p < hw; ++p)
          xr.data_mut()[static_cast<size_t>((c * d.s + (s + 1) % d.s) * hw + p)] =
              x.data()[static_cast<size_t>((c * d.s + s) * hw + p)];
    Tensor yr = ops::atrous_conv_spectral(tape, xr, w, bias, 2, PadMode::kCircular);
    for (int64_t co = 0; co < d.cout; ++co)
      for (int64_t s = 0; s < d.s; ++s)
        for (int64_t p = 0; p < hw; ++p)
          CHECK(std::fabs(
                    yr.data()[static_cast<size_t>((co * d.s + (s + 1) % d.s) * hw + p)] -
                    y.data()[static_cast<size_t>((co * d.s + s) * hw + p)]) < 1e-12);
  }
  SUBCASE("shape and config errors") {
    Tensor x = Tensor::zeros({1, 2, 5, 1, 1});
    Tensor w = Tensor::zeros({1, 3, 3});
    CHECK_THROWS_AS(ops::atrous_conv_spectral(tape, x, w, Tensor::zeros({1}), 1),
                    ShapeError);
    Tensor w2 = Tensor::zeros({1, 2, 4});
    CHECK_THROWS_AS(ops::atrous_conv_spectral(tape, x, w2, Tensor::zeros({1}), 1),
                    ConfigError);
    Tensor w3 = Tensor::zeros({1, 2, 3});
    CHECK_THROWS_AS(ops::atrous_conv_spectral(tape, x, w3, Tensor::zeros({1}), 0),
                    ConfigError);
  }
  SUBCASE("bitwise repeatable") {
    auto run = []() {
      Rng rng(55);
      Tape t2(false);
      Tensor x = rand_tensor(rng, {2, 2, 8, 3, 3}, false);
      Tensor w = rand_tensor(rng, {3, 2, 3}, false);
      Tensor bias = rand_tensor(rng, {3}, false);
      return to_vec(ops::atrous_conv_spectral(t2, x, w, bias, 3));
    };
    auto a = run();
    auto b = run();
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
  }
}

TEST_CASE("pointwise convolution") {
  Tape tape(false);
  Rng rng(61);
  SUBCASE("identity weight") {
    Tensor x = rand_tensor(rng, {2, 3, 4, 2, 2}, false);
    Tensor w = Tensor::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor y = ops::conv_pointwise(tape, x, w, Tensor::zeros({3}));
    expect_close(y, to_vec(x), 0.0);
  }
  SUBCASE("channel summation") {
    Tensor x = rand_tensor(rng, {1, 2, 3, 2, 1}, false);
    Tensor w = Tensor::from_data({1, 2}, {1.0, 1.0});
    Tensor y = ops::conv_pointwise(tape, x, w, Tensor::zeros({1}));
    const int64_t rest = 6;
    for (int64_t p = 0; p < rest; ++p)
      CHECK(y.data()[static_cast<size_t>(p)] ==
            doctest::Approx(x.data()[static_cast<size_t>(p)] +
                            x.data()[static_cast<size_t>(rest + p)])
                .epsilon(1e-15));
  }
  SUBCASE("matches loop reference") {
    Tensor x = rand_tensor(rng, {2, 4, 3, 2, 2}, false);
    Tensor w = rand_tensor(rng, {3, 4}, false);
    Tensor bias = rand_tensor(rng, {3}, false);
    Tensor y = ops::conv_pointwise(tape, x, w, bias);
    auto ref = oracles::pointwise_conv_reference(to_vec(x), to_vec(w), to_vec(bias),
                                                 2, 4, 3, 12);
    expect_close(y, ref, 1e-12);
  }
  SUBCASE("channel mismatch") {
    Tensor x = Tensor::zeros({1, 2, 2, 1, 1});
    CHECK_THROWS_AS(
        ops::conv_pointwise(tape, x, Tensor::zeros({2, 3}), Tensor::zeros({2})),
        ShapeError);
  }
}

TEST_CASE("adaptive average pooling over the spectral axis") {
  Tape tape(false);
  Rng rng(67);
  Tensor x = rand_tensor(rng, {2, 3, 1, 2, 2}, false);
  expect_close(ops::adaptive_avg_pool_spectral(tape, x), to_vec(x), 0.0);

  Tensor v = Tensor::from_data({1, 1, 3, 1, 1}, {1, 2, 3});
  expect_close(ops::adaptive_avg_pool_spectral(tape, v), {2.0}, 1e-15);

  Tensor big = rand_tensor(rng, {2, 2, 5, 3, 2}, false);
  Tensor pooled = ops::adaptive_avg_pool_spectral(tape, big);
  REQUIRE(pooled.shape() == Shape{2, 2, 1, 3, 2});
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t c = 0; c < 2; ++c)
      for (int64_t p = 0; p < 6; ++p) {
        double acc = 0.0;
        for (int64_t s = 0; s < 5; ++s)
          acc += big.data()[static_cast<size_t>(((b * 2 + c) * 5 + s) * 6 + p)];
        CHECK(std::fabs(pooled.data()[static_cast<size_t>((b * 2 + c) * 6 + p)] -
                        acc / 5.0) < 1e-12);
      }

  CHECK_THROWS_AS(ops::adaptive_avg_pool_spectral(tape, Tensor::zeros({2, 2})),
                  ShapeError);
}

TEST_CASE("batch normalization statistics and modes") {
  Tape tape(false);
  Rng rng(71);
  const int64_t B = 4, C = 3, S = 5;
  Tensor x = rand_tensor(rng, {B, C, S}, false, -2.0, 3.0);
  Tensor gamma = Tensor::full({C}, 1.0);
  Tensor beta = Tensor::zeros({C});

  SUBCASE("train mode normalizes per channel") {
    BatchNormState st = BatchNormState::init(C);
    Tensor y = ops::batch_norm(tape, x, gamma, beta, st, BatchNormMode::kTrain);
    for (int64_t c = 0; c < C; ++c) {
      double mean = 0.0, var = 0.0;
      for (int64_t b = 0; b < B; ++b)
        for (int64_t s = 0; s < S; ++s)
          mean += y.data()[static_cast<size_t>((b * C + c) * S + s)];
      mean /= static_cast<double>(B * S);
      for (int64_t b = 0; b < B; ++b)
        for (int64_t s = 0; s < S; ++s) {
          const double d = y.data()[static_cast<size_t>((b * C + c) * S + s)] - mean;
          var += d * d;
        }
      var /= static_cast<double>(B * S);
      CHECK(std::fabs(mean) < 1e-6);
      CHECK(std::fabs(var - 1.0) < 1e-4);  // eps shrinks variance slightly
    }
  }
  SUBCASE("constant channel maps to zeros") {
    Tensor cx = Tensor::full({2, 1, 4}, 5.0);
    BatchNormState st = BatchNormState::init(1);
    Tensor y = ops::batch_norm(tape, cx, Tensor::full({1}, 1.0), Tensor::zeros({1}),
                               st, BatchNormMode::kTrain);
    for (double v : y.data()) CHECK(std::fabs(v) < 1e-12);
  }
  SUBCASE("eval with exact batch stats reproduces train output") {
    BatchNormState train_state = BatchNormState::init(C);
    Tensor y_train =
        ops::batch_norm(tape, x, gamma, beta, train_state, BatchNormMode::kTrain);

    BatchNormState eval_state = BatchNormState::init(C);
    for (int64_t c = 0; c < C; ++c) {
      double mean = 0.0, var = 0.0;
      for (int64_t b = 0; b < B; ++b)
        for (int64_t s = 0; s < S; ++s)
          mean += x.data()[static_cast<size_t>((b * C + c) * S + s)];
      mean /= static_cast<double>(B * S);
      for (int64_t b = 0; b < B; ++b)
        for (int64_t s = 0; s < S; ++s) {
          const double d = x.data()[static_cast<size_t>((b * C + c) * S + s)] - mean;
          var += d * d;
        }
      var /= static_cast<double>(B * S);
      eval_state.running_mean.data_mut()[static_cast<size_t>(c)] = mean;
      eval_state.running_var.data_mut()[static_cast<size_t>(c)] = var;
    }
    Tensor y_eval =
        ops::batch_norm(tape, x, gamma, beta, eval_state, BatchNormMode::kEval);
    for (int64_t i = 0; i < y_train.size(); ++i)
      CHECK(std::fabs(y_train.data()[static_cast<size_t>(i)] -
                      y_eval.data()[static_cast<size_t>(i)]) < 1e-10);
  }
  SUBCASE("running statistics follow the moving average") {
    BatchNormState st = BatchNormState::init(C);
    ops::batch_norm(tape, x, gamma, beta, st, BatchNormMode::kTrain);
    for (int64_t c = 0; c < C; ++c) {
      double mean = 0.0, var = 0.0;
      for (int64_t b = 0; b < B; ++b)
        for (int64_t s = 0; s < S; ++s)
          mean += x.data()[static_cast<size_t>((b * C + c) * S + s)];
      mean /= static_cast<double>(B * S);
      for (int64_t b = 0; b < B; ++b)
        for (int64_t s = 0; s < S; ++s) {
          const double d = x.data()[static_cast<size_t>((b * C + c) * S + s)] - mean;
          var += d * d;
        }
      var /= static_cast<double>(B * S);
      CHECK(st.running_mean.data()[static_cast<size_t>(c)] ==
            doctest::Approx(0.1 * mean).epsilon(1e-12));
      CHECK(st.running_var.data()[static_cast<size_t>(c)] ==
            doctest::Approx(0.9 * 1.0 + 0.1 * var).epsilon(1e-12));
    }
  }
  SUBCASE("degenerate train batch is rejected") {
    Tensor one = Tensor::full({1, 2, 1}, 3.0);
    BatchNormState st = BatchNormState::init(2);
    CHECK_THROWS_AS(ops::batch_norm(tape, one, Tensor::full({2}, 1.0),
                                    Tensor::zeros({2}), st, BatchNormMode::kTrain),
                    NumericError);
  }
  SUBCASE("gamma and beta shift the output") {
    BatchNormState st = BatchNormState::init(C);
    Tensor g2 = Tensor::full({C}, 2.0);
    Tensor b2 = Tensor::full({C}, -1.0);
    Tensor base = ops::batch_norm(tape, x, gamma, beta, st, BatchNormMode::kTrain);
    BatchNormState st2 = BatchNormState::init(C);
    Tensor scaled = ops::batch_norm(tape, x, g2, b2, st2, BatchNormMode::kTrain);
    for (int64_t i = 0; i < base.size(); ++i)
      CHECK(scaled.data()[static_cast<size_t>(i)] ==
            doctest::Approx(2.0 * base.data()[static_cast<size_t>(i)] - 1.0)
                .epsilon(1e-10));
  }
}

TEST_CASE("softmax properties") {
  Tape tape(false);
  Tensor u = Tensor::full({1, 4}, 3.7);
  expect_close(ops::softmax(tape, u), {0.25, 0.25, 0.25, 0.25}, 1e-15);

  Tensor two = Tensor::from_data({2}, {0.0, std::log(3.0)});
  expect_close(ops::softmax(tape, two), {0.25, 0.75}, 1e-12);

  Rng rng(73);
  Tensor x = rand_tensor(rng, {5, 7}, false, -4.0, 4.0);
  Tensor y = ops::softmax(tape, x);
  for (int64_t r = 0; r < 5; ++r) {
    double sum = 0.0;
    for (int64_t i = 0; i < 7; ++i) sum += y.data()[static_cast<size_t>(r * 7 + i)];
    CHECK(std::fabs(sum - 1.0) < 1e-12);
  }

  Tensor shifted = ops::affine(tape, x, 1.0, 123.456);
  Tensor ys = ops::softmax(tape, shifted);
  for (int64_t i = 0; i < y.size(); ++i)
    CHECK(std::fabs(y.data()[static_cast<size_t>(i)] -
                    ys.data()[static_cast<size_t>(i)]) < 1e-12);

  Tensor extreme = Tensor::from_data({2}, {1e4, 0.0});
  Tensor ye = ops::softmax(tape, extreme);
  CHECK(std::isfinite(ye.data()[0]));
  CHECK(std::fabs(ye.data()[0] + ye.data()[1] - 1.0) < 1e-12);
  CHECK(ye.data()[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("cross entropy closed forms and oracle") {
  Tape tape(false);
  Tensor eq = Tensor::full({3, 4}, 0.7);
  std::vector<int64_t> labels = {0, 2, 3};
  Tensor loss = ops::cross_entropy(tape, eq, labels);
  CHECK(loss.value() == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  Tensor sharp = Tensor::from_data({1, 2}, {10.0, -10.0});
  std::vector<int64_t> l0 = {0};
  Tensor sl = ops::cross_entropy(tape, sharp, l0);
  CHECK(sl.value() == doctest::Approx(std::log1p(std::exp(-20.0))).epsilon(1e-6));

  Rng rng(79);
  Tensor x = rand_tensor(rng, {6, 5}, false, -3.0, 3.0);
  std::vector<int64_t> ls(6);
  for (auto& l : ls) l = static_cast<int64_t>(rng.below(5));
  Tensor got = ops::cross_entropy(tape, x, ls);
  long double total = 0.0L;
  for (int64_t r = 0; r < 6; ++r) {
    long double s = 0.0L;
    for (int64_t c = 0; c < 5; ++c)
      s += expl(static_cast<long double>(x.data()[static_cast<size_t>(r * 5 + c)]));
    total += logl(s) - static_cast<long double>(
                           x.data()[static_cast<size_t>(r * 5 + ls[static_cast<size_t>(r)])]);
  }
  CHECK(std::fabs(got.value() - static_cast<double>(total / 6.0L)) < 1e-10);

  std::vector<int64_t> bad = {0, 5, 1, 0, 0, 0};
  CHECK_THROWS_AS(ops::cross_entropy(tape, x, bad), LabelError);
  std::vector<int64_t> neg = {0, -1, 1, 0, 0, 0};
  CHECK_THROWS_AS(ops::cross_entropy(tape, x, neg), LabelError);
}

TEST_CASE("adam optimizer behaviour") {
  SUBCASE("zero gradient leaves parameters alone") {
    Tensor w = Tensor::from_data({3}, {1.0, -2.0, 0.5}, true);
    Adam opt({w});
    opt.zero_grad();
    opt.step();
    expect_close(Tensor::from_data({3}, to_vec(w)), {1.0, -2.0, 0.5}, 0.0);
  }
  SUBCASE("first step has magnitude close to lr") {
    Tensor w = Tensor::from_data({2}, {0.3, -0.6}, true);
    Adam opt({w}, AdamConfig{});
    w.grad_mut()[0] = 4.2;
    w.grad_mut()[1] = -0.037;
    opt.step();
    CHECK(w.data()[0] == doctest::Approx(0.3 - 0.001).epsilon(1e-6));
    CHECK(w.data()[1] == doctest::Approx(-0.6 + 0.001).epsilon(1e-6));
  }
  SUBCASE("second step matches the hand-evaluated recurrence") {
    Tensor w = Tensor::from_data({1}, {1.0}, true);
    AdamConfig cfg;
    Adam opt({w}, cfg);
    const double g1 = 0.5, g2 = -0.25;
    w.grad_mut()[0] = g1;
    opt.step();
    double m = (1 - cfg.beta1) * g1;
    double v = (1 - cfg.beta2) * g1 * g1;
    double expect = 1.0 - cfg.lr * (m / (1 - cfg.beta1)) /
                              (std::sqrt(v / (1 - cfg.beta2)) + cfg.eps);
    CHECK(w.data()[0] == doctest::Approx(expect).epsilon(1e-14));
    w.zero_grad();
    w.grad_mut()[0] = g2;
    opt.step();
    m = cfg.beta1 * m + (1 - cfg.beta1) * g2;
    v = cfg.beta2 * v + (1 - cfg.beta2) * g2 * g2;
    expect -= cfg.lr * (m / (1 - cfg.beta1 * cfg.beta1)) /
              (std::sqrt(v / (1 - cfg.beta2 * cfg.beta2)) + cfg.eps);
    CHECK(w.data()[0] == doctest::Approx(expect).epsilon(1e-14));
  }
  SUBCASE("descends w^2 monotonically") {
    Tensor w = Tensor::from_data({1}, {1.0}, true);
    AdamConfig cfg;
    cfg.lr = 0.1;
    Adam opt({w}, cfg);
    double prev = std::fabs(w.data()[0]);
    for (int i = 0; i < 10; ++i) {
      Tape tape;
      opt.zero_grad();
      Tensor loss = ops::sum_all(tape, ops::mul(tape, w, w));
      tape.backward(loss);
      opt.step();
      const double cur = std::fabs(w.data()[0]);
      CHECK(cur < prev);
      prev = cur;
    }
  }
  SUBCASE("rejects parameters without gradient storage") {
    Tensor w = Tensor::from_data({1}, {1.0});
    CHECK_THROWS_AS(Adam({w}), ConfigError);
  }
}

TEST_CASE("gradient checks for every primitive") {
  const double kTol = 1e-4;
  Rng rng(1009);
  auto check = [&](const char* name, const LossFn& f,
                   const std::vector<Tensor>& inputs) {
    auto res = gradcheck(f, inputs);
    CAPTURE(name);
    CAPTURE(res.worst);
    CHECK(res.max_rel_err < kTol);
  };

  SUBCASE("add sub mul affine") {
    for (Shape s : std::vector<Shape>{{4}, {2, 3}, {2, 2, 2}}) {
      Tensor a = rand_tensor(rng, s, true);
      Tensor b = rand_tensor(rng, s, true);
      Tensor r = rand_tensor(rng, s, false);
      check("add", [&](Tape& t, const std::vector<Tensor>& in) {
        return weighted_sum(t, ops::add(t, in[0], in[1]), r);
      }, {a, b});
      check("sub", [&](Tape& t, const std::vector<Tensor>& in) {
        return weighted_sum(t, ops::sub(t, in[0], in[1]), r);
      }, {a, b});
      check("mul", [&](Tape& t, const std::vector<Tensor>& in) {
        return weighted_sum(t, ops::mul(t, in[0], in[1]), r);
      }, {a, b});
      check("affine", [&](Tape& t, const std::vector<Tensor>& in) {
        return weighted_sum(t, ops::affine(t, in[0], -1.7, 0.3), r);
      }, {a});
    }
  }
  SUBCASE("activations") {
    for (Shape s : std::vector<Shape>{{5}, {3, 2}, {2, 2, 3}}) {
      Tensor x = rand_away_from_zero(rng, s, true);
      Tensor r = rand_tensor(rng, s, false);
      check("leaky_relu", [&](Tape& t, const std::vector<Tensor>& in) {
        return weighted_sum(t, ops::leaky_relu(t, in[0], 0.2), r);
      }, {x});
      check("relu", [&](Tape& t, const std::vector<Tensor>& in) {
        return weighted_sum(t, ops::relu(t, in[0]), r);
      }, {x});
      check("abs", [&](Tape& t, const std::vector<Tensor>& in) {
        return weighted_sum(t, ops::abs(t, in[0]), r);
      }, {x});
      Tensor x2 = rand_tensor(rng, s, true, -2.0, 2.0);
      check("sigmoid", [&](Tape& t, const std::vector<Tensor>& in) {
        return weighted_sum(t, ops::sigmoid(t, in[0]), r);
      }, {x2});
    }
  }
  SUBCASE("shape ops") {
    for (Shape s : std::vector<Shape>{{6}, {2, 3}, {3, 2, 2}}) {
      Tensor x = rand_tensor(rng, s, true);
      Tensor r = rand_tensor(rng, {numel(s)}, false);
      check("reshape", [&](Tape& t, const std::vector<Tensor>& in) {
        return weighted_sum(t, ops::reshape(t, in[0], {numel(s)}), r);
      }, {x});
    }
    {
      Tensor x = rand_tensor(rng, {2, 3, 4}, true);
      Tensor r = rand_tensor(rng, {4, 2, 3}, false);
      check("transpose", [&](Tape& t, const std::vector<Tensor>& in) {
        return weighted_sum(t, ops::transpose(t, in[0], {2, 0, 1}), r);
      }, {x});
    }
    {
      Tensor x = rand_tensor(rng, {2, 1, 3}, true);
      Tensor r = rand_tensor(rng, {2, 4, 3}, false);
      check("broadcast_axis", [&](Tape& t, const std::vector<Tensor>& in) {
        return weighted_sum(t, ops::broadcast_axis(t, in[0], 1, 4), r);
      }, {x});
    }
    {
      Tensor x = rand_tensor(rng, {3, 4, 2}, true);
      Tensor r = rand_tensor(rng, {3, 2}, false);
      check("select_axis", [&](Tape& t, const std::vector<Tensor>& in) {
        return weighted_sum(t, ops::select_axis(t, in[0], 1, 2), r);
      }, {x});
    }
    {
      Tensor a = rand_tensor(rng, {2, 3}, true);
      Tensor b = rand_tensor(rng, {2, 2}, true);
      Tensor r = rand_tensor(rng, {2, 5}, false);
      check("concat_last", [&](Tape& t, const std::vector<Tensor>& in) {
        return weighted_sum(t, ops::concat_last(t, in[0], in[1]), r);
      }, {a, b});
    }
  }
  SUBCASE("reductions") {
    for (int axis : {0, 1, 2}) {
      Tensor x = rand_tensor(rng, {2, 3, 2}, true);
      Shape out = {2, 3, 2};
      out[static_cast<size_t>(axis)] = 1;
      Tensor r = rand_tensor(rng, out, false);
      check("mean_axis", [&](Tape& t, const std::vector<Tensor>& in) {
        return weighted_sum(t, ops::mean_axis(t, in[0], axis, true), r);
      }, {x});
    }
    Tensor x = rand_tensor(rng, {7}, true);
    check("sum_all", [&](Tape& t, const std::vector<Tensor>& in) {
      return ops::sum_all(t, in[0]);
    }, {x});
  }
  SUBCASE("linear and matmul") {
    for (Shape s : std::vector<Shape>{{3, 4}, {2, 2, 4}, {4}}) {
      Tensor x = rand_tensor(rng, s, true);
      Tensor w = rand_tensor(rng, {3, 4}, true);
      Tensor b = rand_tensor(rng, {3}, true);
      Shape out = s;
      out.back() = 3;
      Tensor r = rand_tensor(rng, out, false);
      check("linear", [&](Tape& t, const std::vector<Tensor>& in) {
        return weighted_sum(t, ops::linear(t, in[0], in[1], in[2]), r);
      }, {x, w, b});
      check("linear_no_bias", [&](Tape& t, const std::vector<Tensor>& in) {
        return weighted_sum(t, ops::linear(t, in[0], in[1], Tensor()), r);
      }, {x, w});
    }
    for (auto [as, bs, os] :
         std::vector<std::tuple<Shape, Shape, Shape>>{
             {{3, 4}, {4, 2}, {3, 2}},
             {{2, 2, 3}, {2, 3, 2}, {2, 2, 2}},
             {{2, 1, 4}, {2, 4, 3}, {2, 1, 3}}}) {
      Tensor a = rand_tensor(rng, as, true);
      Tensor b = rand_tensor(rng, bs, true);
      Tensor r = rand_tensor(rng, os, false);
      check("matmul", [&](Tape& t, const std::vector<Tensor>& in) {
        return weighted_sum(t, ops::matmul(t, in[0], in[1]), r);
      }, {a, b});
    }
  }
  SUBCASE("atrous and pointwise convolutions") {
    for (auto [rate, pad] : std::vector<std::pair<int64_t, PadMode>>{
             {1, PadMode::kZero}, {2, PadMode::kZero}, {3, PadMode::kZero},
             {2, PadMode::kCircular}}) {
      Tensor x = rand_tensor(rng, {2, 2, 6, 2, 2}, true);
      Tensor w = rand_tensor(rng, {3, 2, 3}, true);
      Tensor b = rand_tensor(rng, {3}, true);
      Tensor r = rand_tensor(rng, {2, 3, 6, 2, 2}, false);
      check("atrous_conv", [&, rate, pad](Tape& t, const std::vector<Tensor>& in) {
        return weighted_sum(
            t, ops::atrous_conv_spectral(t, in[0], in[1], in[2], rate, pad), r);
      }, {x, w, b});
    }
    {
      Tensor x = rand_tensor(rng, {2, 3, 4, 2, 2}, true);
      Tensor w = rand_tensor(rng, {2, 3}, true);
      Tensor b = rand_tensor(rng, {2}, true);
      Tensor r = rand_tensor(rng, {2, 2, 4, 2, 2}, false);
      check("conv_pointwise", [&](Tape& t, const std::vector<Tensor>& in) {
        return weighted_sum(t, ops::conv_pointwise(t, in[0], in[1], in[2]), r);
      }, {x, w, b});
    }
    {
      Tensor x = rand_tensor(rng, {2, 2, 5, 2, 2}, true);
      Tensor r = rand_tensor(rng, {2, 2, 1, 2, 2}, false);
      check("adaptive_avg_pool", [&](Tape& t, const std::vector<Tensor>& in) {
        return weighted_sum(t, ops::adaptive_avg_pool_spectral(t, in[0]), r);
      }, {x});
    }
  }
  SUBCASE("batch norm both modes") {
    for (int trial = 0; trial < 3; ++trial) {
      Tensor x = rand_tensor(rng, {3, 2, 4}, true, -2.0, 2.0);
      Tensor gamma = rand_tensor(rng, {2}, true, 0.5, 1.5);
      Tensor beta = rand_tensor(rng, {2}, true, -0.5, 0.5);
      Tensor r = rand_tensor(rng, {3, 2, 4}, false);
      BatchNormState st = BatchNormState::init(2);
      check("batch_norm_train", [&](Tape& t, const std::vector<Tensor>& in) {
        return weighted_sum(t,
                            ops::batch_norm(t, in[0], in[1], in[2], st,
                                            BatchNormMode::kTrain),
                            r);
      }, {x, gamma, beta});
      BatchNormState ev = BatchNormState::init(2);
      ev.running_mean.data_mut()[0] = 0.2;
      ev.running_mean.data_mut()[1] = -0.4;
      ev.running_var.data_mut()[0] = 1.3;
      ev.running_var.data_mut()[1] = 0.6;
      check("batch_norm_eval", [&](Tape& t, const std::vector<Tensor>& in) {
        return weighted_sum(t,
                            ops::batch_norm(t, in[0], in[1], in[2], ev,
                                            BatchNormMode::kEval),
                            r);
      }, {x, gamma, beta});
    }
  }
  SUBCASE("softmax and cross entropy") {
    for (Shape s : std::vector<Shape>{{5}, {3, 4}, {2, 2, 3}}) {
      Tensor x = rand_tensor(rng, s, true, -2.0, 2.0);
      Tensor r = rand_tensor(rng, s, false);
      check("softmax", [&](Tape& t, const std::vector<Tensor>& in) {
        return weighted_sum(t, ops::softmax(t, in[0]), r);
      }, {x});
    }
    for (int trial = 0; trial < 3; ++trial) {
      Tensor logits = rand_tensor(rng, {4, 5}, true, -2.0, 2.0);
      std::vector<int64_t> labels(4);
      for (auto& l : labels) l = static_cast<int64_t>(rng.below(5));
      check("cross_entropy", [&](Tape& t, const std::vector<Tensor>& in) {
        return ops::cross_entropy(t, in[0], labels);
      }, {logits});
    }
  }
}

TEST_CASE("composite graph gradient check") {
  // A miniature of the real network: conv -> batch norm -> activation ->
  // pooling collapse -> linear -> softmax cross-entropy.
  Rng rng(2027);
  Tensor x = rand_tensor(rng, {2, 2, 5, 2, 2}, true);
  Tensor cw = rand_tensor(rng, {3, 2, 3}, true, -0.5, 0.5);
  Tensor cb = rand_tensor(rng, {3}, true, -0.1, 0.1);
  Tensor gamma = rand_tensor(rng, {3}, true, 0.8, 1.2);
  Tensor beta = rand_tensor(rng, {3}, true, -0.2, 0.2);
  Tensor lw = rand_tensor(rng, {4, 12}, true, -0.4, 0.4);
  Tensor lb = rand_tensor(rng, {4}, true, -0.1, 0.1);
  std::vector<int64_t> labels = {1, 3};
  BatchNormState st = BatchNormState::init(3);

  LossFn f = [&](Tape& t, const std::vector<Tensor>& in) {
    Tensor h = ops::atrous_conv_spectral(t, in[0], in[1], in[2], 2);
    h = ops::batch_norm(t, h, in[3], in[4], st, BatchNormMode::kTrain);
    h = ops::leaky_relu(t, h, 0.2);
    h = ops::adaptive_avg_pool_spectral(t, h);
    h = ops::reshape(t, h, {2, 12});
    Tensor logits = ops::linear(t, h, in[5], in[6]);
    return ops::cross_entropy(t, logits, labels);
  };
  auto res = gradcheck(f, {x, cw, cb, gamma, beta, lw, lb});
  CAPTURE(res.worst);
  CHECK(res.max_rel_err < 1e-4);
  CHECK(res.coords_checked > 100);
}
