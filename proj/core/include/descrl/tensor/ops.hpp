#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "descrl/tensor/graph.hpp"

// Differentiable primitives. Every op appends one node to the graph of its
// first argument and throws ShapeError (naming the node) on bad shapes.
// Ops over "the last axis" treat a tensor as [rows, cols] with cols = last
// dimension.
namespace descrl::tensor {

template <typename Real>
Var<Real> add(Var<Real> a, Var<Real> b);
template <typename Real>
Var<Real> sub(Var<Real> a, Var<Real> b);
/// Elementwise product.
template <typename Real>
Var<Real> mul(Var<Real> a, Var<Real> b);
template <typename Real>
Var<Real> scale(Var<Real> x, double factor);
/// x + y where y's shape equals the trailing dimensions of x.
template <typename Real>
Var<Real> add_broadcast(Var<Real> x, Var<Real> y);

/// [N,K] x [K,M].
template <typename Real>
Var<Real> matmul(Var<Real> a, Var<Real> b);
/// x[..., K] * w[K, M] + b[M]; pass an invalid Var to skip the bias.
template <typename Real>
Var<Real> linear(Var<Real> x, Var<Real> w, Var<Real> b);

template <typename Real>
Var<Real> gelu(Var<Real> x);
template <typename Real>
Var<Real> relu(Var<Real> x);
template <typename Real>
Var<Real> tanh(Var<Real> x);
template <typename Real>
Var<Real> exp(Var<Real> x);
template <typename Real>
Var<Real> clamp(Var<Real> x, double lo, double hi);
template <typename Real>
Var<Real> minimum(Var<Real> a, Var<Real> b);

/// Row-wise softmax over the last axis (max-subtracted).
template <typename Real>
Var<Real> softmax(Var<Real> x);
template <typename Real>
Var<Real> log_softmax(Var<Real> x);

template <typename Real>
Var<Real> layer_norm(Var<Real> x, Var<Real> gamma, Var<Real> beta,
                     double eps = 1e-5);

/// Rows of a [U, D] table selected by index: [n, D]. Used for embeddings
/// and for reusing encoded observations.
template <typename Real>
Var<Real> gather_rows(Var<Real> table, std::span<const int> index);

template <typename Real>
Var<Real> reshape(Var<Real> x, Shape shape);
/// Concatenation along the last axis; leading dims must agree.
template <typename Real>
Var<Real> concat_last(const std::vector<Var<Real>>& parts);
/// Columns [begin, end) of the last axis.
template <typename Real>
Var<Real> slice_last(Var<Real> x, std::size_t begin, std::size_t end);
/// Positions [begin, end) of axis 1 of a rank-3 tensor.
template <typename Real>
Var<Real> slice_seq(Var<Real> x, std::size_t begin, std::size_t end);
/// [B,T1,D] ++ [B,T2,D] -> [B,T1+T2,D].
template <typename Real>
Var<Real> concat_seq(Var<Real> a, Var<Real> b);

/// Multi-head scaled dot-product attention without projections.
/// q: [B,T,D], k/v: [B,S,D]. key_mask (size B*S, 1 = attend) may be empty.
/// A query row with no admissible key yields zeros.
template <typename Real>
Var<Real> attention(Var<Real> q, Var<Real> k, Var<Real> v, std::size_t heads,
                    std::span<const std::uint8_t> key_mask, bool causal);

template <typename Real>
Var<Real> sum(Var<Real> x);
template <typename Real>
Var<Real> mean(Var<Real> x);

/// [N,C] -> [N]: x[i, index[i]].
template <typename Real>
Var<Real> pick(Var<Real> x, std::span<const int> index);

/// Weighted mean token cross-entropy over rows of logits [..., V].
/// Rows with weight 0 are ignored; empty weights means all ones.
template <typename Real>
Var<Real> cross_entropy(Var<Real> logits, std::span<const int> targets,
                        std::span<const Real> weights = {});

/// Weighted mean of -sum_j q_ij log softmax(z_i / T)_j against a
/// row-stochastic target matrix of the same shape as logits.
template <typename Real>
Var<Real> soft_cross_entropy(Var<Real> logits, const Tensor<Real>& targets,
                             std::span<const Real> weights = {},
                             double temperature = 1.0);

/// sum_r w_r * ||x_r - t_r||^2 / (sum_r w_r * cols).
template <typename Real>
Var<Real> squared_error(Var<Real> x, const Tensor<Real>& target,
                        std::span<const Real> weights = {});

template <typename Real>
Var<Real> operator+(Var<Real> a, Var<Real> b) {
  return add(a, b);
}
template <typename Real>
Var<Real> operator-(Var<Real> a, Var<Real> b) {
  return sub(a, b);
}
template <typename Real>
Var<Real> operator*(Var<Real> a, Var<Real> b) {
  return mul(a, b);
}
template <typename Real>
Var<Real> operator*(double c, Var<Real> x) {
  return scale(x, c);
}

}  // namespace descrl::tensor
