#include "itpn/heads.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "itpn/error.hpp"

namespace itpn {

Tensor pixel_target_normalize(const Tensor& image, const MaskSpec& spec, std::size_t unit_pixels, double eps) {
  Tensor patches = extract_patches(image, unit_pixels, spec.masked_units());
  auto values = patches.data();
  const std::size_t width = patches.cols();
  for (std::size_t r = 0; r < patches.rows(); ++r) {
    Scalar* row = values.data() + r * width;
    Scalar mu = 0.0;
    for (std::size_t j = 0; j < width; ++j) mu += row[j];
    mu /= static_cast<Scalar>(width);
    Scalar var = 0.0;
    for (std::size_t j = 0; j < width; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<Scalar>(width);
    const Scalar inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < width; ++j) row[j] = (row[j] - mu) * inv;
  }
  return patches;
}

PixelDecoder PixelDecoder::init(const ModelConfig& cfg, Rng& rng) {
  PixelDecoder d;
  for (std::size_t i = 0; i < cfg.decoder_depth; ++i)
    d.blocks.push_back(AttentionBlock::init(cfg.decoder_dim, cfg.decoder_heads, cfg.ffn_ratio, cfg.layer_norm_eps, rng));
  d.norm = LayerNorm::init(cfg.decoder_dim, cfg.layer_norm_eps);
  const std::size_t unit = cfg.unit_pixels();
  d.head = Linear::init(cfg.decoder_dim, unit * unit * cfg.channels, rng);
  return d;
}

void PixelDecoder::collect(const std::string& prefix, ParamList& out) const {
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + ".block" + std::to_string(i), 0, out);
  norm.collect(prefix + ".norm", 0, out);
  head.collect(prefix + ".head", 0, out);
}

Tensor mim_decode(const Tensor& fused, const PixelDecoder& decoder) {
  Tensor x = fused;
  for (const auto& block : decoder.blocks) x = block.forward(x);
  return decoder.head.forward(decoder.norm.forward(x));
}

MfmBranch MfmBranch::init(std::size_t grid_side, std::size_t d, std::size_t teacher_dim, std::size_t head_dim,
                          double eps, Rng& rng) {
  MfmBranch b;
  b.mask_token = normal_init({d}, 0.02, rng);
  b.pos_embed = sincos_pos_embed(grid_side, grid_side, d);
  b.norm = LayerNorm::init(d, eps);
  const std::size_t heads = std::max<std::size_t>(1, d / head_dim);
  b.mixer = SelfAttention::init(d, d % heads == 0 ? heads : 1, rng);
  b.head = Linear::init(d, teacher_dim, rng);
  return b;
}

void MfmBranch::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".mask_token", mask_token, 0});
  norm.collect(prefix + ".norm", 0, out);
  mixer.collect(prefix + ".mixer", 0, out);
  head.collect(prefix + ".head", 0, out);
}

Tensor mfm_context(const Tensor& v, const MaskSpec& spec, std::size_t stage, const MfmBranch& branch) {
  Tensor dense = complement_with_mask_tokens(v, spec, stage, branch.mask_token, branch.pos_embed);
  return add(dense, branch.mixer.forward(branch.norm.forward(dense)));
}

Tensor mfm_head(const Tensor& tokens, const Linear& head) {
  if (tokens.cols() != head.in_features()) {
    throw ConfigError("mfm_head: token width " + std::to_string(tokens.cols()) + " but head expects " +
                      std::to_string(head.in_features()));
  }
  return head.forward(tokens);
}

Tensor mfm_predict(const Tensor& v, const MaskSpec& spec, std::size_t stage, const MfmBranch& branch) {
  const auto& masked = spec.stage(stage).masked;
  // only masked rows are scored, so project just those
  Tensor ctx = select_tokens(mfm_context(v, spec, stage, branch), masked);
  return mfm_head(ctx, branch.head);
}

UnifiedHead UnifiedHead::init(const ModelConfig& cfg, std::size_t teacher_dim, Rng& rng) {
  UnifiedHead h;
  for (std::size_t s = 1; s <= cfg.num_stages(); ++s) h.proj.push_back(Linear::init(cfg.dim(s), teacher_dim, rng));
  h.branch = MfmBranch::init(cfg.base_side(), teacher_dim, teacher_dim, cfg.mixer_head_dim, cfg.layer_norm_eps, rng);
  return h;
}

void UnifiedHead::collect(const std::string& prefix, ParamList& out) const {
  for (std::size_t s = 0; s < proj.size(); ++s) proj[s].collect(prefix + ".proj" + std::to_string(s + 1), 0, out);
  branch.collect(prefix + ".branch", out);
}

Tensor unified_predict(const PyramidFeatures& v, const MaskSpec& spec, const UnifiedHead& head) {
  const std::size_t S = v.num_stages();
  Tensor total;
  for (std::size_t s = 1; s <= S; ++s) {
    Tensor term = head.proj[s - 1].forward(pool_to_coarsest(v[s], spec, s));
    total = total.defined() ? add(total, term) : term;
  }
  return mfm_predict(total, spec, S, head.branch);
}

LossBreakdown total_loss(const Tensor& pred_pixels, const Tensor& pixel_targets, std::span<const Tensor> pred_feats,
                         std::span<const Tensor> feat_targets, double lambda) {
  if (pixel_targets.requires_grad()) throw ContractError("pixel targets must be detached");
  if (pred_feats.size() != feat_targets.size()) {
    throw ContractError("feature reconstruction has " + std::to_string(pred_feats.size()) + " predictions but " +
                        std::to_string(feat_targets.size()) + " stage targets");
  }
  LossBreakdown out;
  out.mim = mse(pred_pixels, pixel_targets);
  out.total = out.mim;
  if (pred_feats.empty()) {
    out.mfm_sum = Tensor::scalar(0.0);
    return out;
  }
  for (std::size_t s = 0; s < pred_feats.size(); ++s) {
    if (feat_targets[s].requires_grad()) throw ContractError("feature targets must be detached");
    Tensor term = mse(pred_feats[s], feat_targets[s]);
    out.mfm.push_back(term);
    out.mfm_sum = out.mfm_sum.defined() ? add(out.mfm_sum, term) : term;
  }
  out.total = add(out.mim, scale(out.mfm_sum, lambda));
  return out;
}

Tensor masked_pixel_predictions(const Tensor& decoded, const MaskSpec& spec) {
  const auto& st = spec.stage(spec.num_stages());
  if (st.factor != 1) throw ConfigError("decoder grid must be the mask-unit grid");
  return select_tokens(decoded, st.masked);
}

Classifier Classifier::init(std::size_t d, std::size_t classes, Rng& rng) { return {Linear::init(d, classes, rng)}; }

void Classifier::collect(const std::string& prefix, std::size_t layer, ParamList& out) const {
  fc.collect(prefix + ".fc", layer, out);
}

Tensor mean_pool(const Tensor& tokens) {
  const std::size_t k = tokens.rows();
  if (k == 0) throw ContractError("mean_pool over zero tokens");
  return matmul(Tensor::full({1, k}, 1.0 / static_cast<Scalar>(k)), tokens);
}

Tensor classify(const Tensor& tokens, const Classifier& head) { return head.fc.forward(mean_pool(tokens)); }

PretrainHeads PretrainHeads::init(const ModelConfig& cfg, Rng& rng) {
  PretrainHeads h;
  h.fuse = DecoderFuse::init(cfg, rng);
  h.decoder = PixelDecoder::init(cfg, rng);
  for (std::size_t s = 1; s <= cfg.num_stages(); ++s) {
    h.mfm.push_back(MfmBranch::init(cfg.stage_side(s), cfg.dim(s), cfg.dim(s), cfg.mixer_head_dim,
                                    cfg.layer_norm_eps, rng));
  }
  h.unified = UnifiedHead::init(cfg, cfg.dim(cfg.num_stages()), rng);
  return h;
}

ParamList PretrainHeads::pixel_parameters() const {
  ParamList out;
  fuse.collect("fuse", out);
  decoder.collect("decoder", out);
  return out;
}

ParamList PretrainHeads::mfm_parameters() const {
  ParamList out;
  for (std::size_t s = 0; s < mfm.size(); ++s) mfm[s].collect("mfm" + std::to_string(s + 1), out);
  return out;
}

ParamList PretrainHeads::unified_parameters() const {
  ParamList out;
  unified.collect("unified", out);
  return out;
}

ParamList PretrainHeads::parameters() const {
  ParamList out = pixel_parameters();
  for (auto& p : mfm_parameters()) out.push_back(p);
  for (auto& p : unified_parameters()) out.push_back(p);
  return out;
}

}  // namespace itpn
