#include "itpn/layers.hpp"

#include <algorithm>
#include <cmath>

#include "itpn/error.hpp"

namespace itpn {

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  std::vector<Scalar> v(fan_in * fan_out);
  for (auto& x : v) x = dist(rng);
  return Tensor({fan_in, fan_out}, std::move(v), true);
}

Tensor normal_init(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<Scalar> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

Tensor sincos_pos_embed(std::size_t height, std::size_t width, std::size_t d) {
  if (d % 4 != 0) throw ConfigError("sin-cos positional width must be a multiple of 4, got " + std::to_string(d));
  const std::size_t quarter = d / 4;
  std::vector<Scalar> table(height * width * d);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      Scalar* row = table.data() + (r * width + c) * d;
      // first half encodes the column, second half the row
      for (std::size_t half = 0; half < 2; ++half) {
        const double pos = half == 0 ? static_cast<double>(c) : static_cast<double>(r);
        for (std::size_t i = 0; i < quarter; ++i) {
          const double omega = 1.0 / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(quarter));
          row[half * 2 * quarter + i] = std::sin(pos * omega);
          row[half * 2 * quarter + quarter + i] = std::cos(pos * omega);
        }
      }
    }
  }
  return Tensor({height * width, d}, std::move(table));
}

Linear Linear::init(std::size_t in, std::size_t out, Rng& rng) {
  return {xavier_uniform(in, out, rng), Tensor::zeros({out}, true)};
}

Linear Linear::zeros(std::size_t in, std::size_t out) {
  return {Tensor::zeros({in, out}, true), Tensor::zeros({out}, true)};
}

Linear Linear::identity(std::size_t n) { return {Tensor::eye(n, true), Tensor::zeros({n}, true)}; }

Tensor Linear::forward(const Tensor& x) const { return add(matmul(x, weight), bias); }

void Linear::collect(const std::string& prefix, std::size_t layer, ParamList& out) const {
  out.push_back({prefix + ".weight", weight, layer});
  out.push_back({prefix + ".bias", bias, layer});
}

LayerNorm LayerNorm::init(std::size_t d, double eps) {
  return {Tensor::full({d}, 1.0, true), Tensor::zeros({d}, true), eps};
}

Tensor LayerNorm::forward(const Tensor& x) const { return layer_norm(x, gamma, beta, eps); }

void LayerNorm::collect(const std::string& prefix, std::size_t layer, ParamList& out) const {
  out.push_back({prefix + ".gamma", gamma, layer});
  out.push_back({prefix + ".beta", beta, layer});
}

Mlp Mlp::init(std::size_t d_in, std::size_t hidden, std::size_t d_out, Rng& rng) {
  Mlp m;
  m.fc1 = Linear::init(d_in, hidden, rng);
  m.fc2 = Linear::init(hidden, d_out, rng);
  return m;
}

Tensor Mlp::forward(const Tensor& x) const { return fc2.forward(gelu(fc1.forward(x))); }

void Mlp::collect(const std::string& prefix, std::size_t layer, ParamList& out) const {
  fc1.collect(prefix + ".fc1", layer, out);
  fc2.collect(prefix + ".fc2", layer, out);
}

CmlpBlock CmlpBlock::init(std::size_t d, std::size_t ffn_ratio, double eps, Rng& rng) {
  CmlpBlock b;
  b.norm1 = LayerNorm::init(d, eps);
  b.cmlp = Mlp::init(d, d * ffn_ratio, d, rng);
  b.norm2 = LayerNorm::init(d, eps);
  b.ffn = Mlp::init(d, d * ffn_ratio, d, rng);
  return b;
}

Tensor CmlpBlock::forward(const Tensor& x) const {
  Tensor h = add(x, cmlp.forward(norm1.forward(x)));
  return add(h, ffn.forward(norm2.forward(h)));
}

void CmlpBlock::collect(const std::string& prefix, std::size_t layer, ParamList& out) const {
  norm1.collect(prefix + ".norm1", layer, out);
  cmlp.collect(prefix + ".cmlp", layer, out);
  norm2.collect(prefix + ".norm2", layer, out);
  ffn.collect(prefix + ".ffn", layer, out);
}

SelfAttention SelfAttention::init(std::size_t d, std::size_t heads, Rng& rng) {
  if (heads == 0 || d % heads != 0) throw ConfigError("attention width " + std::to_string(d) + " not divisible by heads");
  SelfAttention a;
  a.q = Linear::init(d, d, rng);
  a.k = Linear::init(d, d, rng);
  a.v = Linear::init(d, d, rng);
  a.proj = Linear::init(d, d, rng);
  a.heads = heads;
  return a;
}

Tensor SelfAttention::forward(const Tensor& x) const {
  return proj.forward(scaled_dot_attention(q.forward(x), k.forward(x), v.forward(x), heads));
}

void SelfAttention::collect(const std::string& prefix, std::size_t layer, ParamList& out) const {
  q.collect(prefix + ".q", layer, out);
  k.collect(prefix + ".k", layer, out);
  v.collect(prefix + ".v", layer, out);
  proj.collect(prefix + ".proj", layer, out);
}

AttentionBlock AttentionBlock::init(std::size_t d, std::size_t heads, std::size_t ffn_ratio, double eps, Rng& rng) {
  AttentionBlock b;
  b.norm1 = LayerNorm::init(d, eps);
  b.attn = SelfAttention::init(d, heads, rng);
  b.norm2 = LayerNorm::init(d, eps);
  b.ffn = Mlp::init(d, d * ffn_ratio, d, rng);
  return b;
}

Tensor AttentionBlock::forward(const Tensor& x) const {
  Tensor h = add(x, attn.forward(norm1.forward(x)));
  return add(h, ffn.forward(norm2.forward(h)));
}

void AttentionBlock::collect(const std::string& prefix, std::size_t layer, ParamList& out) const {
  norm1.collect(prefix + ".norm1", layer, out);
  attn.collect(prefix + ".attn", layer, out);
  norm2.collect(prefix + ".norm2", layer, out);
  ffn.collect(prefix + ".ffn", layer, out);
}

void copy_params(const ParamList& from, const ParamList& to) {
  if (from.size() != to.size()) {
    throw ContractError("parameter lists differ in length: " + std::to_string(from.size()) + " vs " +
                        std::to_string(to.size()));
  }
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (from[i].tensor.shape() != to[i].tensor.shape()) {
      throw ContractError("parameter " + from[i].name + " has shape " + shape_str(from[i].tensor.shape()) +
                          " but target " + to[i].name + " has " + shape_str(to[i].tensor.shape()));
    }
    auto src = from[i].tensor.data();
    auto dst = to[i].tensor.impl()->data.begin();
    std::copy(src.begin(), src.end(), dst);
  }
}

}  // namespace itpn
