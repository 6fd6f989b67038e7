#include "itpn/neck.hpp"

#include <string>

#include "itpn/error.hpp"

namespace itpn {

TopDown TopDown::init(std::size_t d_coarse, std::size_t d_fine, std::size_t ffn_ratio, Rng& rng) {
  TopDown t;
  t.proj = Linear::init(d_coarse, d_fine, rng);
  t.cmlp.fc1 = Linear::init(d_fine, d_fine * ffn_ratio, rng);
  t.cmlp.fc2 = Linear::zeros(d_fine * ffn_ratio, d_fine);
  return t;
}

void TopDown::collect(const std::string& prefix, ParamList& out) const {
  proj.collect(prefix + ".proj", 0, out);
  cmlp.collect(prefix + ".cmlp", 0, out);
}

Neck Neck::init(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  Neck neck;
  for (std::size_t s = 1; s < cfg.num_stages(); ++s) {
    neck.laterals.push_back(Linear::identity(cfg.dim(s)));
    neck.topdown.push_back(TopDown::init(cfg.dim(s + 1), cfg.dim(s), cfg.ffn_ratio, rng));
  }
  return neck;
}

ParamList Neck::parameters() const {
  ParamList out;
  for (std::size_t i = 0; i < laterals.size(); ++i) {
    laterals[i].collect("lateral" + std::to_string(i + 1), 0, out);
    topdown[i].collect("topdown" + std::to_string(i + 1), out);
  }
  return out;
}

Tensor lateral_project(const Tensor& u, const Linear& lateral) { return lateral.forward(u); }

std::vector<std::size_t> upsample_parent_rows(const MaskSpec& spec, std::size_t stage) {
  const StageMask& fine = spec.stage(stage);
  const StageMask& coarse = spec.stage(stage + 1);
  if (coarse.grid.height * 2 != fine.grid.height || coarse.grid.width * 2 != fine.grid.width) {
    throw ConfigError("stage " + std::to_string(stage + 1) + " grid is not half of stage " + std::to_string(stage));
  }
  std::vector<std::size_t> rows;
  rows.reserve(fine.visible.size());
  for (auto idx : fine.visible) {
    const std::size_t r = idx / fine.grid.width, c = idx % fine.grid.width;
    const auto row = coarse.visible_row[(r / 2) * coarse.grid.width + c / 2];
    if (row == kNoRow) {
      throw InvariantViolation("visible stage-" + std::to_string(stage) + " token " + std::to_string(idx) +
                               " has a masked parent");
    }
    rows.push_back(static_cast<std::size_t>(row));
  }
  return rows;
}

Tensor topdown_upsample(const Tensor& v_coarse, const MaskSpec& spec, std::size_t stage, const TopDown& branch) {
  const auto& coarse = spec.stage(stage + 1);
  if (v_coarse.rank() != 2 || v_coarse.extent(0) != coarse.visible.size()) {
    throw ContractError("topdown_upsample: " + shape_str(v_coarse.shape()) + " is not aligned with the " +
                        std::to_string(coarse.visible.size()) + " visible tokens of stage " + std::to_string(stage + 1));
  }
  Tensor up = gather_rows(v_coarse, upsample_parent_rows(spec, stage));
  return branch.cmlp.forward(branch.proj.forward(up));
}

PyramidFeatures Neck::forward(const StageFeatures& u) const {
  const std::size_t S = u.num_stages();
  if (S != laterals.size() + 1) {
    throw ContractError("neck built for " + std::to_string(laterals.size() + 1) + " stages, features have " +
                        std::to_string(S));
  }
  PyramidFeatures out;
  out.spec = u.spec;
  out.levels.resize(S);
  out.levels[S - 1] = u[S];
  for (std::size_t s = S - 1; s >= 1; --s) {
    out.levels[s - 1] =
        add(lateral_project(u[s], laterals[s - 1]), topdown_upsample(out.levels[s], *u.spec, s, topdown[s - 1]));
  }
  return out;
}

Tensor coarsest_pool_matrix(const MaskSpec& spec, std::size_t stage) {
  const std::size_t S = spec.num_stages();
  const StageMask& fine = spec.stage(stage);
  const StageMask& top = spec.stage(S);
  if (top.factor == 0 || fine.factor % top.factor != 0) throw ConfigError("stage factors are not nested");
  const std::size_t f = fine.factor / top.factor;
  std::vector<Scalar> p(top.visible.size() * fine.visible.size(), 0.0);
  const Scalar w = 1.0 / static_cast<Scalar>(f * f);
  for (std::size_t i = 0; i < fine.visible.size(); ++i) {
    const std::size_t idx = fine.visible[i];
    const std::size_t r = idx / fine.grid.width, c = idx % fine.grid.width;
    const auto row = top.visible_row[(r / f) * top.grid.width + c / f];
    if (row == kNoRow) throw InvariantViolation("visible token under a masked coarse cell");
    p[static_cast<std::size_t>(row) * fine.visible.size() + i] = w;
  }
  return Tensor({top.visible.size(), fine.visible.size()}, std::move(p));
}

Tensor pool_to_coarsest(const Tensor& v, const MaskSpec& spec, std::size_t stage) {
  if (stage == spec.num_stages()) return v;
  return matmul(coarsest_pool_matrix(spec, stage), v);
}

DecoderFuse DecoderFuse::init(const ModelConfig& cfg, Rng& rng) {
  DecoderFuse f;
  for (std::size_t s = 1; s <= cfg.num_stages(); ++s) f.proj.push_back(Linear::init(cfg.dim(s), cfg.decoder_dim, rng));
  f.mask_token = normal_init({cfg.decoder_dim}, 0.02, rng);
  f.pos_embed = sincos_pos_embed(cfg.base_side(), cfg.base_side(), cfg.decoder_dim);
  return f;
}

void DecoderFuse::collect(const std::string& prefix, ParamList& out) const {
  for (std::size_t s = 0; s < proj.size(); ++s) proj[s].collect(prefix + ".proj" + std::to_string(s + 1), 0, out);
  out.push_back({prefix + ".mask_token", mask_token, 0});
}

Tensor fuse_for_decoder(const PyramidFeatures& v, const MaskSpec& spec, const DecoderFuse& fuse) {
  const std::size_t S = v.num_stages();
  if (fuse.proj.size() != S) throw ContractError("decoder fuse expects " + std::to_string(fuse.proj.size()) + " stages");
  Tensor total;
  for (std::size_t s = 1; s <= S; ++s) {
    Tensor term = fuse.proj[s - 1].forward(pool_to_coarsest(v[s], spec, s));
    total = total.defined() ? add(total, term) : term;
  }
  return complement_with_mask_tokens(total, spec, S, fuse.mask_token, fuse.pos_embed);
}

}  // namespace itpn
