#pragma once

// Top-down feature pyramid built only from token-wise maps:
//   V^S = U^S,  V^s = lateral(U^s) + g^s(V^{s+1})  for s < S,
// where g^s duplicates each coarse token onto its 2x2 children, projects it
// to the finer width and applies a channel-wise MLP. The same parameters
// serve reconstruction during pre-training and recognition afterwards.

#include <vector>

#include "itpn/backbone.hpp"

namespace itpn {

// V^1..V^S, 1-based: pyramid[s]. Rows follow spec->stage(s).visible.
struct PyramidFeatures {
  MaskSpecPtr spec;
  std::vector<Tensor> levels;  // levels[s-1] = V^s

  std::size_t num_stages() const { return levels.size(); }
  const Tensor& operator[](std::size_t s) const { return levels.at(s - 1); }
};

struct TopDown {
  Linear proj;  // dim(s+1) -> dim(s)
  Mlp cmlp;     // dim(s) -> ffn -> dim(s); fc2 starts at zero

  static TopDown init(std::size_t d_coarse, std::size_t d_fine, std::size_t ffn_ratio, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

class Neck {
 public:
  // Laterals start as identity maps and top-down branches output zero, so a
  // fresh neck passes U^s through unchanged.
  static Neck init(const ModelConfig& cfg, Rng& rng);

  std::vector<Linear> laterals;  // laterals[s-1] for s = 1..S-1
  std::vector<TopDown> topdown;  // topdown[s-1] maps V^{s+1} onto stage s

  ParamList parameters() const;
  PyramidFeatures forward(const StageFeatures& u) const;
};

Tensor lateral_project(const Tensor& u, const Linear& lateral);

// Rows of V^{s+1} feeding each visible stage-s token (nearest-neighbour
// duplication onto 2x2 children).
std::vector<std::size_t> upsample_parent_rows(const MaskSpec& spec, std::size_t stage);

Tensor topdown_upsample(const Tensor& v_coarse, const MaskSpec& spec, std::size_t stage, const TopDown& branch);

inline PyramidFeatures neck_forward(const StageFeatures& u, const Neck& neck) { return neck.forward(u); }

// [K_S x K_s] averaging matrix: each visible stage-S cell takes the mean of its
// visible stage-s descendants.
Tensor coarsest_pool_matrix(const MaskSpec& spec, std::size_t stage);
Tensor pool_to_coarsest(const Tensor& v, const MaskSpec& spec, std::size_t stage);

// Decoder-input assembly parameters (owned by the pre-training heads).
struct DecoderFuse {
  std::vector<Linear> proj;  // proj[s-1]: dim(s) -> decoder width
  Tensor mask_token;         // [decoder width]
  Tensor pos_embed;          // constant [base grid x decoder width]

  static DecoderFuse init(const ModelConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

// Pools every V^s to the coarsest grid, projects to the decoder width, sums,
// and complements masked cells with the mask token plus positional terms.
// Output: dense [base grid x decoder width].
Tensor fuse_for_decoder(const PyramidFeatures& v, const MaskSpec& spec, const DecoderFuse& fuse);

}  // namespace itpn
