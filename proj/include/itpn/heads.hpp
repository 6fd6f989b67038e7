#pragma once

// Pre-training heads (pixel decoder, per-stage feature heads, the unified
// head used with a frozen teacher), the combined objective, and the
// classification head.

#include <span>
#include <vector>

#include "itpn/neck.hpp"

namespace itpn {

// Per-unit standardized pixels of every masked unit, rows in masked-unit
// order: [num masked units x unit_pixels^2 * C].
Tensor pixel_target_normalize(const Tensor& image, const MaskSpec& spec, std::size_t unit_pixels, double eps = 1e-6);

struct PixelDecoder {
  std::vector<AttentionBlock> blocks;
  LayerNorm norm;
  Linear head;  // decoder width -> unit_pixels^2 * C

  static PixelDecoder init(const ModelConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

// Dense fused grid [base cells x decoder width] -> [base cells x unit_pixels^2 * C].
Tensor mim_decode(const Tensor& fused, const PixelDecoder& decoder);

// Feature-reconstruction branch for one pyramid level. The sparse level is
// complemented with a learnable mask token (plus fixed positions), mixed by
// one pre-norm self-attention layer so masked cells see the visible context,
// and mapped token-wise to the teacher width.
struct MfmBranch {
  Tensor mask_token;  // [d]
  Tensor pos_embed;   // constant [grid x d]
  LayerNorm norm;
  SelfAttention mixer;
  Linear head;  // d -> teacher width

  static MfmBranch init(std::size_t grid_side, std::size_t d, std::size_t teacher_dim, std::size_t head_dim,
                        double eps, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

// Dense [grid x d] context grid for stage `stage` from its visible tokens.
Tensor mfm_context(const Tensor& v, const MaskSpec& spec, std::size_t stage, const MfmBranch& branch);
// Token-wise projection to the teacher width.
Tensor mfm_head(const Tensor& tokens, const Linear& head);
// Predictions at the masked positions of `stage`, rows in masked order.
Tensor mfm_predict(const Tensor& v, const MaskSpec& spec, std::size_t stage, const MfmBranch& branch);

// Student side of the frozen-teacher variant: pooled-and-summed pyramid
// projected to the teacher width, predicted at masked stage-S cells.
struct UnifiedHead {
  std::vector<Linear> proj;  // proj[s-1]: dim(s) -> teacher width
  MfmBranch branch;

  static UnifiedHead init(const ModelConfig& cfg, std::size_t teacher_dim, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

Tensor unified_predict(const PyramidFeatures& v, const MaskSpec& spec, const UnifiedHead& head);

struct LossBreakdown {
  Tensor mim;
  std::vector<Tensor> mfm;  // one per supervised level
  Tensor mfm_sum;
  Tensor total;
};

// Mean-squared error per term, total = L_mim + lambda * sum_s L_mfm^s. All
// inputs are already restricted to masked positions; targets must not
// require gradients.
LossBreakdown total_loss(const Tensor& pred_pixels, const Tensor& pixel_targets, std::span<const Tensor> pred_feats,
                         std::span<const Tensor> feat_targets, double lambda);

// Rows of the dense decoder output at masked units.
Tensor masked_pixel_predictions(const Tensor& decoded, const MaskSpec& spec);

struct Classifier {
  Linear fc;  // dim(S) -> classes

  static Classifier init(std::size_t d, std::size_t classes, Rng& rng);
  std::size_t parameter_count() const { return fc.weight.numel() + fc.bias.numel(); }
  void collect(const std::string& prefix, std::size_t layer, ParamList& out) const;
};

// Mean over rows: [K x d] -> [1 x d].
Tensor mean_pool(const Tensor& tokens);
// Stage-S tokens -> [1 x classes] logits.
Tensor classify(const Tensor& tokens, const Classifier& head);

struct PretrainHeads {
  DecoderFuse fuse;
  PixelDecoder decoder;
  std::vector<MfmBranch> mfm;  // mfm[s-1]
  UnifiedHead unified;

  static PretrainHeads init(const ModelConfig& cfg, Rng& rng);
  ParamList pixel_parameters() const;
  ParamList mfm_parameters() const;
  ParamList unified_parameters() const;
  ParamList parameters() const;
};

}  // namespace itpn
