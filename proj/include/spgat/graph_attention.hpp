#pragma once

#include <cstdint>

#include "spgat/ops.hpp"
#include "spgat/rng.hpp"
#include "spgat/tape.hpp"

namespace spgat {

enum class ScoreKind {
  kDotProduct,         // e_ij = leaky_relu(psi((theta_i) * (phi_j)))
  kFeatureDifference,  // e_ij = psi(|theta_i - phi_j|)
};

// One attention layer over node features [B,N,d]. theta/phi embed into de
// dimensions, psi maps de scores to one logit, xi transforms the values.
struct GatLayerParams {
  Tensor theta_w, theta_b;  // [de,d], [de]
  Tensor phi_w, phi_b;      // [de,d], [de]
  Tensor psi_w;             // [1,de], no bias: scores are a pure projection
  Tensor xi_w, xi_b;        // [dout,d], [dout]
  double slope = 0.2;
  ScoreKind score = ScoreKind::kDotProduct;
};

GatLayerParams make_gat_layer_params(int64_t d, int64_t de, int64_t dout, Rng& rng,
                                     double slope = 0.2,
                                     ScoreKind score = ScoreKind::kDotProduct);

// Row-stochastic attention [B,N,N] over the dense node graph.
Tensor gat_scores(Tape& tape, const Tensor& h, const GatLayerParams& params);

// h'_i = leaky_relu(sum_j alpha_ij * xi(h_j)).
Tensor gat_aggregate(Tape& tape, const Tensor& h, const Tensor& alpha,
                     const GatLayerParams& params);

// Two attention layers in sequence; both must be width-preserving.
Tensor gat_block(Tape& tape, const Tensor& h, const GatLayerParams& layer1,
                 const GatLayerParams& layer2);

// D^{-1/2} (A+I) D^{-1/2} for the 8-neighbor lattice on a p-by-p grid,
// nodes indexed row-major. Constant (no gradient).
Tensor lattice_adjacency_normalized(int64_t p);

// h' = leaky_relu(M h W^T), no bias.
Tensor gcn_layer(Tape& tape, const Tensor& h, const Tensor& adjacency,
                 const Tensor& weight, double slope);

// [B,C,S,P,P] -> mean over S -> node features [B, P*P, C], node (r,c) = r*P+c.
Tensor collapse_spectrum(Tape& tape, const Tensor& stream);

}  // namespace spgat
