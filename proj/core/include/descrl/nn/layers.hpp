#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "descrl/tensor/graph.hpp"
#include "descrl/tensor/init.hpp"
#include "descrl/tensor/ops.hpp"

// Transformer building blocks. Layer structs hold parameter ids only, so
// the same layout works for float and double copies of a ParameterSet.
namespace descrl::nn {

using tensor::Graph;
using tensor::ParameterSet;
using tensor::ParamId;
using tensor::Rng;
using tensor::Tensor;
using tensor::Var;

enum class Init { kXavier, kZero };

struct Linear {
  ParamId weight = 0;
  ParamId bias = 0;
  bool has_bias = true;
  std::size_t in = 0;
  std::size_t out = 0;
};

struct LayerNorm {
  ParamId gamma = 0;
  ParamId beta = 0;
};

struct MultiHeadAttention {
  Linear q, k, v, o;
  std::size_t heads = 1;
};

/// Pre-norm encoder block: x + MHA(LN x), then x + FFN(LN x).
struct EncoderLayer {
  LayerNorm ln_attn;
  MultiHeadAttention attn;
  LayerNorm ln_ff;
  Linear ff_in, ff_out;
};

/// Pre-norm decoder block with causal self-attention and cross-attention.
struct DecoderLayer {
  LayerNorm ln_self;
  MultiHeadAttention self_attn;
  LayerNorm ln_cross;
  MultiHeadAttention cross_attn;
  LayerNorm ln_ff;
  Linear ff_in, ff_out;
};

template <typename Real>
Linear make_linear(ParameterSet<Real>& params, const std::string& name, std::size_t in,
                   std::size_t out, Rng& rng, Init init = Init::kXavier, bool bias = true);
template <typename Real>
LayerNorm make_layer_norm(ParameterSet<Real>& params, const std::string& name, std::size_t dim);
template <typename Real>
MultiHeadAttention make_attention(ParameterSet<Real>& params, const std::string& name,
                                  std::size_t dim, std::size_t heads, Rng& rng);
template <typename Real>
EncoderLayer make_encoder_layer(ParameterSet<Real>& params, const std::string& name,
                                std::size_t dim, std::size_t heads, std::size_t ffn, Rng& rng);
template <typename Real>
DecoderLayer make_decoder_layer(ParameterSet<Real>& params, const std::string& name,
                                std::size_t dim, std::size_t heads, std::size_t ffn, Rng& rng);

template <typename Real>
Var<Real> apply(Graph<Real>& g, const Linear& layer, Var<Real> x);
template <typename Real>
Var<Real> apply(Graph<Real>& g, const LayerNorm& layer, Var<Real> x);

/// query [B,T,D] attends to source [B,S,D].
template <typename Real>
Var<Real> apply(Graph<Real>& g, const MultiHeadAttention& layer, Var<Real> query,
                Var<Real> source, std::span<const std::uint8_t> source_mask, bool causal);

template <typename Real>
Var<Real> apply(Graph<Real>& g, const EncoderLayer& layer, Var<Real> x,
                std::span<const std::uint8_t> key_mask);

template <typename Real>
Var<Real> apply(Graph<Real>& g, const DecoderLayer& layer, Var<Real> x, Var<Real> memory,
                std::span<const std::uint8_t> memory_mask, bool causal = true);

/// Sinusoidal positional encoding table [length, dim].
template <typename Real>
Tensor<Real> sinusoidal_encoding(std::size_t length, std::size_t dim);

}  // namespace descrl::nn
