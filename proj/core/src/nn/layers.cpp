#include "descrl/nn/layers.hpp"

#include <cmath>

namespace descrl::nn {

template <typename Real>
Linear make_linear(ParameterSet<Real>& params, const std::string& name, std::size_t in,
                   std::size_t out, Rng& rng, Init init, bool bias) {
  Linear l;
  l.in = in;
  l.out = out;
  l.has_bias = bias;
  l.weight = params.add(name + ".w", init == Init::kZero
                                         ? Tensor<Real>({in, out})
                                         : tensor::xavier_uniform<Real>({in, out}, in, out, rng));
  if (bias) l.bias = params.add(name + ".b", Tensor<Real>({out}));
  return l;
}

template <typename Real>
LayerNorm make_layer_norm(ParameterSet<Real>& params, const std::string& name, std::size_t dim) {
  return {params.add(name + ".gamma", Tensor<Real>({dim}, Real{1})),
          params.add(name + ".beta", Tensor<Real>({dim}))};
}

template <typename Real>
MultiHeadAttention make_attention(ParameterSet<Real>& params, const std::string& name,
                                  std::size_t dim, std::size_t heads, Rng& rng) {
  MultiHeadAttention a;
  a.q = make_linear(params, name + ".q", dim, dim, rng);
  a.k = make_linear(params, name + ".k", dim, dim, rng, Init::kXavier, false);
  a.v = make_linear(params, name + ".v", dim, dim, rng);
  a.o = make_linear(params, name + ".o", dim, dim, rng);
  a.heads = heads;
  return a;
}

template <typename Real>
EncoderLayer make_encoder_layer(ParameterSet<Real>& params, const std::string& name,
                                std::size_t dim, std::size_t heads, std::size_t ffn, Rng& rng) {
  EncoderLayer e;
  e.ln_attn = make_layer_norm(params, name + ".ln1", dim);
  e.attn = make_attention(params, name + ".attn", dim, heads, rng);
  e.ln_ff = make_layer_norm(params, name + ".ln2", dim);
  e.ff_in = make_linear(params, name + ".ff1", dim, ffn, rng);
  e.ff_out = make_linear(params, name + ".ff2", ffn, dim, rng);
  return e;
}

template <typename Real>
DecoderLayer make_decoder_layer(ParameterSet<Real>& params, const std::string& name,
                                std::size_t dim, std::size_t heads, std::size_t ffn, Rng& rng) {
  DecoderLayer d;
  d.ln_self = make_layer_norm(params, name + ".ln1", dim);
  d.self_attn = make_attention(params, name + ".self", dim, heads, rng);
  d.ln_cross = make_layer_norm(params, name + ".ln2", dim);
  d.cross_attn = make_attention(params, name + ".cross", dim, heads, rng);
  d.ln_ff = make_layer_norm(params, name + ".ln3", dim);
  d.ff_in = make_linear(params, name + ".ff1", dim, ffn, rng);
  d.ff_out = make_linear(params, name + ".ff2", ffn, dim, rng);
  return d;
}

template <typename Real>
Var<Real> apply(Graph<Real>& g, const Linear& layer, Var<Real> x) {
  return tensor::linear(x, g.param(layer.weight),
                        layer.has_bias ? g.param(layer.bias) : Var<Real>{});
}

template <typename Real>
Var<Real> apply(Graph<Real>& g, const LayerNorm& layer, Var<Real> x) {
  return tensor::layer_norm(x, g.param(layer.gamma), g.param(layer.beta));
}

template <typename Real>
Var<Real> apply(Graph<Real>& g, const MultiHeadAttention& layer, Var<Real> query,
                Var<Real> source, std::span<const std::uint8_t> source_mask, bool causal) {
  Var<Real> q = apply(g, layer.q, query);
  Var<Real> k = apply(g, layer.k, source);
  Var<Real> v = apply(g, layer.v, source);
  Var<Real> a = tensor::attention(q, k, v, layer.heads, source_mask, causal);
  return apply(g, layer.o, a);
}

template <typename Real>
Var<Real> apply(Graph<Real>& g, const EncoderLayer& layer, Var<Real> x,
                std::span<const std::uint8_t> key_mask) {
  Var<Real> h = apply(g, layer.ln_attn, x);
  x = x + apply(g, layer.attn, h, h, key_mask, false);
  h = apply(g, layer.ln_ff, x);
  return x + apply(g, layer.ff_out, tensor::gelu(apply(g, layer.ff_in, h)));
}

template <typename Real>
Var<Real> apply(Graph<Real>& g, const DecoderLayer& layer, Var<Real> x, Var<Real> memory,
                std::span<const std::uint8_t> memory_mask, bool causal) {
  Var<Real> h = apply(g, layer.ln_self, x);
  x = x + apply(g, layer.self_attn, h, h, {}, causal);
  h = apply(g, layer.ln_cross, x);
  x = x + apply(g, layer.cross_attn, h, memory, memory_mask, false);
  h = apply(g, layer.ln_ff, x);
  return x + apply(g, layer.ff_out, tensor::gelu(apply(g, layer.ff_in, h)));
}

template <typename Real>
Tensor<Real> sinusoidal_encoding(std::size_t length, std::size_t dim) {
  Tensor<Real> pe({length, dim});
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) /
                                                static_cast<double>(dim));
      const double angle = static_cast<double>(pos) * freq;
      pe.at(pos, i) = static_cast<Real>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return pe;
}

#define DESCRL_INSTANTIATE_NN(R)                                                          \
  template Linear make_linear(ParameterSet<R>&, const std::string&, std::size_t,         \
                              std::size_t, Rng&, Init, bool);                            \
  template LayerNorm make_layer_norm(ParameterSet<R>&, const std::string&, std::size_t); \
  template MultiHeadAttention make_attention(ParameterSet<R>&, const std::string&,       \
                                             std::size_t, std::size_t, Rng&);            \
  template EncoderLayer make_encoder_layer(ParameterSet<R>&, const std::string&,         \
                                           std::size_t, std::size_t, std::size_t, Rng&); \
  template DecoderLayer make_decoder_layer(ParameterSet<R>&, const std::string&,         \
                                           std::size_t, std::size_t, std::size_t, Rng&); \
  template Var<R> apply(Graph<R>&, const Linear&, Var<R>);                               \
  template Var<R> apply(Graph<R>&, const LayerNorm&, Var<R>);                            \
  template Var<R> apply(Graph<R>&, const MultiHeadAttention&, Var<R>, Var<R>,            \
                        std::span<const std::uint8_t>, bool);                            \
  template Var<R> apply(Graph<R>&, const EncoderLayer&, Var<R>,                          \
                        std::span<const std::uint8_t>);                                  \
  template Var<R> apply(Graph<R>&, const DecoderLayer&, Var<R>, Var<R>,                  \
                        std::span<const std::uint8_t>, bool);                            \
  template Tensor<R> sinusoidal_encoding(std::size_t, std::size_t);

DESCRL_INSTANTIATE_NN(float)
DESCRL_INSTANTIATE_NN(double)

#undef DESCRL_INSTANTIATE_NN

}  // namespace descrl::nn
