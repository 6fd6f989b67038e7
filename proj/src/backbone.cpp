#include "itpn/backbone.hpp"

#include <string>

#include "itpn/error.hpp"

namespace itpn {

Tensor extract_patches(const Tensor& image, std::size_t patch, std::span<const std::size_t> cells) {
  if (image.rank() != 3) throw DimensionError("image must be [H x W x C], got " + shape_str(image.shape()));
  const std::size_t h = image.extent(0), w = image.extent(1), c = image.extent(2);
  if (patch == 0 || h % patch != 0 || w % patch != 0) {
    throw ConfigError("image " + shape_str(image.shape()) + " is not divisible into " + std::to_string(patch) +
                      "-pixel patches");
  }
  const std::size_t gw = w / patch, cells_total = (h / patch) * gw;
  const std::size_t width = patch * patch * c;
  std::vector<Scalar> out(cells.size() * width);
  const auto px = image.data();
  for (std::size_t r = 0; r < cells.size(); ++r) {
    if (cells[r] >= cells_total) throw IndexError("patch cell " + std::to_string(cells[r]) + " outside image grid");
    const std::size_t pr = cells[r] / gw, pc = cells[r] % gw;
    Scalar* dst = out.data() + r * width;
    for (std::size_t y = 0; y < patch; ++y) {
      const Scalar* src = px.data() + ((pr * patch + y) * w + pc * patch) * c;
      std::copy(src, src + patch * c, dst + y * patch * c);
    }
  }
  return Tensor({cells.size(), width}, std::move(out));
}

Backbone Backbone::init(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  Backbone net;
  net.cfg_ = cfg;
  const std::size_t S = cfg.num_stages();
  const std::size_t side1 = cfg.stage_side(1);
  net.embed = Linear::init(cfg.patch_size * cfg.patch_size * cfg.channels, cfg.dim(1), rng);
  net.pos_embed = sincos_pos_embed(side1, side1, cfg.dim(1));
  for (std::size_t s = 1; s < S; ++s) {
    std::vector<CmlpBlock> blocks;
    for (std::size_t b = 0; b < cfg.blocks_per_stage[s - 1]; ++b)
      blocks.push_back(CmlpBlock::init(cfg.dim(s), cfg.ffn_ratio, cfg.layer_norm_eps, rng));
    net.cmlp_stages.push_back(std::move(blocks));
    net.merges.push_back(Linear::init(4 * cfg.dim(s), cfg.dim(s + 1), rng));
  }
  for (std::size_t b = 0; b < cfg.blocks_per_stage[S - 1]; ++b)
    net.attention_blocks.push_back(
        AttentionBlock::init(cfg.dim(S), cfg.num_heads, cfg.ffn_ratio, cfg.layer_norm_eps, rng));
  return net;
}

ParamList Backbone::parameters() const {
  ParamList out;
  embed.collect("embed", 0, out);
  std::size_t layer = 1;
  for (std::size_t s = 0; s < cmlp_stages.size(); ++s) {
    for (std::size_t b = 0; b < cmlp_stages[s].size(); ++b)
      cmlp_stages[s][b].collect("stage" + std::to_string(s + 1) + ".block" + std::to_string(b), layer++, out);
    merges[s].collect("merge" + std::to_string(s + 1), layer, out);
  }
  const std::string last = "stage" + std::to_string(cmlp_stages.size() + 1);
  for (std::size_t b = 0; b < attention_blocks.size(); ++b)
    attention_blocks[b].collect(last + ".block" + std::to_string(b), layer++, out);
  return out;
}

Backbone Backbone::clone() const {
  Rng scratch(0);
  Backbone copy = Backbone::init(cfg_, scratch);
  copy_params(parameters(), copy.parameters());
  auto src = parameters();
  auto dst = copy.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i].tensor.set_requires_grad(src[i].tensor.requires_grad());
  return copy;
}

Tensor patch_embed(const Tensor& image, const MaskSpec& spec, const Backbone& net) {
  const auto& cfg = net.config();
  if (image.rank() != 3 || image.extent(0) != cfg.image_size || image.extent(1) != cfg.image_size ||
      image.extent(2) != cfg.channels) {
    throw ConfigError("image " + shape_str(image.shape()) + " does not match the configured " +
                      std::to_string(cfg.image_size) + "x" + std::to_string(cfg.image_size) + "x" +
                      std::to_string(cfg.channels));
  }
  if (image.extent(0) % cfg.unit_pixels() != 0) {
    throw ConfigError("image side not divisible by the mask unit of " + std::to_string(cfg.unit_pixels()) + " pixels");
  }
  const StageMask& st = spec.stage(1);
  if (st.grid.height != cfg.stage_side(1) || st.grid.width != cfg.stage_side(1)) {
    throw ConfigError("mask stage-1 grid does not match the configured token grid");
  }
  // masked cells are never read
  Tensor patches = extract_patches(image, cfg.patch_size, st.visible);
  Tensor pos = gather_rows(net.pos_embed, st.visible);
  return add(net.embed.forward(patches), pos);
}

std::vector<std::size_t> merge_child_rows(const MaskSpec& spec, std::size_t stage) {
  const StageMask& fine = spec.stage(stage);
  const StageMask& coarse = spec.stage(stage + 1);
  if (fine.grid.height % 2 != 0 || fine.grid.width % 2 != 0) {
    throw ConfigError("patch merge needs an even grid, stage " + std::to_string(stage) + " is " +
                      std::to_string(fine.grid.height) + "x" + std::to_string(fine.grid.width));
  }
  if (coarse.grid.height * 2 != fine.grid.height || coarse.grid.width * 2 != fine.grid.width) {
    throw ConfigError("stage " + std::to_string(stage + 1) + " grid is not half of stage " + std::to_string(stage));
  }
  std::vector<std::size_t> rows;
  rows.reserve(coarse.visible.size() * 4);
  const std::size_t fw = fine.grid.width;
  for (auto parent : coarse.visible) {
    const std::size_t i = parent / coarse.grid.width, j = parent % coarse.grid.width;
    for (std::size_t di = 0; di < 2; ++di) {
      for (std::size_t dj = 0; dj < 2; ++dj) {
        const auto row = fine.visible_row[(2 * i + di) * fw + 2 * j + dj];
        if (row == kNoRow) {
          throw InvariantViolation("2x2 merge group of stage-" + std::to_string(stage + 1) + " token " +
                                   std::to_string(parent) + " straddles a mask unit boundary");
        }
        rows.push_back(static_cast<std::size_t>(row));
      }
    }
  }
  return rows;
}

Tensor patch_merge(const Tensor& x, const MaskSpec& spec, std::size_t stage, const Linear& proj) {
  const auto rows = merge_child_rows(spec, stage);
  const std::size_t d = x.cols();
  Tensor grouped = reshape(gather_rows(x, rows), {rows.size() / 4, 4 * d});
  return proj.forward(grouped);
}

StageFeatures Backbone::forward(const Tensor& image, MaskSpecPtr spec) const {
  const std::size_t S = cfg_.num_stages();
  if (spec->num_stages() != S) {
    throw ConfigError("mask has " + std::to_string(spec->num_stages()) + " stages, model has " + std::to_string(S));
  }
  StageFeatures out;
  out.spec = spec;
  Tensor x = patch_embed(image, *spec, *this);
  out.levels.push_back(x);
  for (std::size_t s = 1; s <= S; ++s) {
    if (s > 1) x = patch_merge(x, *spec, s - 1, merges[s - 2]);
    if (s < S) {
      for (const auto& block : cmlp_stages[s - 1]) x = cmlp_block(x, block);
    } else {
      for (const auto& block : attention_blocks) x = attention_block(x, block);
    }
    out.levels.push_back(x);
  }
  return out;
}

}  // namespace itpn
