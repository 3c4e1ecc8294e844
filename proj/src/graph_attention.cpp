#include "spgat/graph_attention.hpp"

#include <cmath>
#include <string>

#include "spgat/init.hpp"

namespace spgat {
namespace {

void require_node_features(const Tensor& h, const char* who) {
  if (h.ndim() != 3) {
    throw ShapeError(std::string(who) + ": node features must be [B,N,d], got " +
                     shape_str(h.shape()));
  }
}

// Lifts a parameter vector [k] (or [1,k]) to [B,N,...] so elementwise ops
// can consume it alongside per-node tensors.
Tensor lift(Tape& tape, const Tensor& t, Shape target_lead, Shape view) {
  Tensor r = ops::reshape(tape, t, std::move(view));
  for (size_t axis = 0; axis < target_lead.size(); ++axis) {
    r = ops::broadcast_axis(tape, r, static_cast<int>(axis), target_lead[axis]);
  }
  return r;
}

}  // namespace

GatLayerParams make_gat_layer_params(int64_t d, int64_t de, int64_t dout, Rng& rng,
                                     double slope, ScoreKind score) {
  if (d < 1 || de < 1 || dout < 1) {
    throw ConfigError("gat layer: widths must be positive");
  }
  GatLayerParams p;
  p.theta_w = init_uniform({de, d}, d, rng);
  p.theta_b = init_zeros({de});
  p.phi_w = init_uniform({de, d}, d, rng);
  p.phi_b = init_zeros({de});
  p.psi_w = init_uniform({1, de}, de, rng);
  p.xi_w = init_uniform({dout, d}, d, rng);
  p.xi_b = init_zeros({dout});
  p.slope = slope;
  p.score = score;
  return p;
}

Tensor gat_scores(Tape& tape, const Tensor& h, const GatLayerParams& params) {
  require_node_features(h, "gat_scores");
  const int64_t B = h.dim(0), N = h.dim(1);
  const int64_t de = params.theta_w.dim(0);
  Tensor theta = ops::linear(tape, h, params.theta_w, params.theta_b);  // [B,N,de]
  Tensor phi = ops::linear(tape, h, params.phi_w, params.phi_b);        // [B,N,de]

  Tensor logits;
  if (params.score == ScoreKind::kDotProduct) {
    // e_ij = psi_w . (theta_i * phi_j), evaluated for all pairs at once as
    // (theta * psi_w) phi^T.
    Tensor scaled = ops::mul(tape, theta, lift(tape, params.psi_w, {B, N}, {1, 1, de}));
    Tensor e = ops::matmul(tape, scaled, ops::transpose(tape, phi, {0, 2, 1}));
    logits = ops::leaky_relu(tape, e, params.slope);
  } else {
    // e_ij = psi_w . |theta_i - phi_j| over all pairs.
    Tensor ti = ops::broadcast_axis(tape, ops::reshape(tape, theta, {B, N, 1, de}),
                                    2, N);
    Tensor pj = ops::broadcast_axis(tape, ops::reshape(tape, phi, {B, 1, N, de}),
                                    1, N);
    Tensor diff = ops::abs(tape, ops::sub(tape, ti, pj));  // [B,N,N,de]
    Tensor e = ops::linear(tape, diff, params.psi_w, Tensor());  // [B,N,N,1]
    logits = ops::reshape(tape, e, {B, N, N});
  }
  return ops::softmax(tape, logits);
}

Tensor gat_aggregate(Tape& tape, const Tensor& h, const Tensor& alpha,
                     const GatLayerParams& params) {
  require_node_features(h, "gat_aggregate");
  if (alpha.ndim() != 3 || alpha.dim(0) != h.dim(0) || alpha.dim(1) != h.dim(1) ||
      alpha.dim(2) != h.dim(1)) {
    throw ShapeError("gat_aggregate: attention must be [B,N,N] matching features " +
                     shape_str(h.shape()) + ", got " + shape_str(alpha.shape()));
  }
  Tensor values = ops::linear(tape, h, params.xi_w, params.xi_b);  // [B,N,dout]
  Tensor mixed = ops::matmul(tape, alpha, values);
  return ops::leaky_relu(tape, mixed, params.slope);
}

Tensor gat_block(Tape& tape, const Tensor& h, const GatLayerParams& layer1,
                 const GatLayerParams& layer2) {
  Tensor h1 = gat_aggregate(tape, h, gat_scores(tape, h, layer1), layer1);
  return gat_aggregate(tape, h1, gat_scores(tape, h1, layer2), layer2);
}

Tensor lattice_adjacency_normalized(int64_t p) {
  if (p < 1) throw ConfigError("lattice adjacency: grid side must be >= 1");
  const int64_t n = p * p;
  std::vector<double> a(static_cast<size_t>(n * n), 0.0);
  for (int64_t r = 0; r < p; ++r) {
    for (int64_t c = 0; c < p; ++c) {
      const int64_t i = r * p + c;
      a[static_cast<size_t>(i * n + i)] = 1.0;  // self loop
      for (int64_t dr = -1; dr <= 1; ++dr) {
        for (int64_t dc = -1; dc <= 1; ++dc) {
          if (dr == 0 && dc == 0) continue;
          const int64_t rr = r + dr, cc = c + dc;
          if (rr < 0 || rr >= p || cc < 0 || cc >= p) continue;
          a[static_cast<size_t>(i * n + rr * p + cc)] = 1.0;
        }
      }
    }
  }
  std::vector<double> dinv(static_cast<size_t>(n), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (int64_t j = 0; j < n; ++j) deg += a[static_cast<size_t>(i * n + j)];
    dinv[static_cast<size_t>(i)] = 1.0 / std::sqrt(deg);
  }
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      a[static_cast<size_t>(i * n + j)] *=
          dinv[static_cast<size_t>(i)] * dinv[static_cast<size_t>(j)];
    }
  }
  return Tensor::from_data({n, n}, std::move(a));
}

Tensor gcn_layer(Tape& tape, const Tensor& h, const Tensor& adjacency,
                 const Tensor& weight, double slope) {
  require_node_features(h, "gcn_layer");
  const int64_t B = h.dim(0), N = h.dim(1);
  if (adjacency.ndim() != 2 || adjacency.dim(0) != N || adjacency.dim(1) != N) {
    throw ShapeError("gcn_layer: adjacency must be [N,N] with N=" +
                     std::to_string(N) + ", got " + shape_str(adjacency.shape()));
  }
  Tensor m = ops::broadcast_axis(
      tape, ops::reshape(tape, adjacency, {1, N, N}), 0, B);
  Tensor propagated = ops::matmul(tape, m, h);
  Tensor transformed = ops::linear(tape, propagated, weight, Tensor());
  return ops::leaky_relu(tape, transformed, slope);
}

Tensor collapse_spectrum(Tape& tape, const Tensor& stream) {
  if (stream.ndim() != 5) {
    throw ShapeError("collapse_spectrum: stream must be [B,C,S,H,W], got " +
                     shape_str(stream.shape()));
  }
  const int64_t B = stream.dim(0), C = stream.dim(1);
  const int64_t n = stream.dim(3) * stream.dim(4);
  Tensor mean = ops::mean_axis(tape, stream, 2, /*keepdim=*/false);  // [B,C,H,W]
  Tensor flat = ops::reshape(tape, mean, {B, C, n});
  return ops::transpose(tape, flat, {0, 2, 1});  // [B,N,C]
}

}  // namespace spgat
