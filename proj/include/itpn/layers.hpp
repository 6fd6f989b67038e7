#pragma once

// Token-wise building blocks shared by the encoder, the pyramid neck and the
// heads. All inputs are [tokens x width] matrices.

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "itpn/tensor.hpp"

namespace itpn {

using Rng = std::mt19937_64;

struct NamedParam {
  std::string name;
  Tensor tensor;
  std::size_t layer = 0;  // depth index used for layer-wise lr decay
};

using ParamList = std::vector<NamedParam>;

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);
Tensor normal_init(Shape shape, double stddev, Rng& rng);

// 2-D sin-cos positional table of shape [h*w x d]; d must be a multiple of 4.
Tensor sincos_pos_embed(std::size_t height, std::size_t width, std::size_t d);

struct Linear {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]

  static Linear init(std::size_t in, std::size_t out, Rng& rng);
  static Linear zeros(std::size_t in, std::size_t out);
  static Linear identity(std::size_t n);

  std::size_t in_features() const { return weight.extent(0); }
  std::size_t out_features() const { return weight.extent(1); }
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, std::size_t layer, ParamList& out) const;
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;
  double eps = 1e-6;

  static LayerNorm init(std::size_t d, double eps);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, std::size_t layer, ParamList& out) const;
};

// Per-token linear - GELU - linear.
struct Mlp {
  Linear fc1;
  Linear fc2;

  static Mlp init(std::size_t d_in, std::size_t hidden, std::size_t d_out, Rng& rng);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, std::size_t layer, ParamList& out) const;
};

// Pre-norm residual block with a channel-wise MLP in place of spatial mixing:
// x + CMLP(LN(x)), then x + FFN(LN(x)). Rows never interact.
struct CmlpBlock {
  LayerNorm norm1;
  Mlp cmlp;
  LayerNorm norm2;
  Mlp ffn;

  static CmlpBlock init(std::size_t d, std::size_t ffn_ratio, double eps, Rng& rng);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, std::size_t layer, ParamList& out) const;
};

// Multi-head self-attention over all rows, with output projection.
struct SelfAttention {
  Linear q, k, v, proj;
  std::size_t heads = 1;

  static SelfAttention init(std::size_t d, std::size_t heads, Rng& rng);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, std::size_t layer, ParamList& out) const;
};

// Pre-norm transformer block: x + MSA(LN(x)), then x + FFN(LN(x)).
struct AttentionBlock {
  LayerNorm norm1;
  SelfAttention attn;
  LayerNorm norm2;
  Mlp ffn;

  static AttentionBlock init(std::size_t d, std::size_t heads, std::size_t ffn_ratio, double eps, Rng& rng);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, std::size_t layer, ParamList& out) const;
};

// Copies values between two parameter lists of identical layout.
void copy_params(const ParamList& from, const ParamList& to);

}  // namespace itpn
