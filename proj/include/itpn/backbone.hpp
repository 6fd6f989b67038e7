#pragma once

// Hierarchical encoder that only ever touches visible tokens. Stages 1..S-1
// run channel-wise MLP blocks, stage S runs global self-attention, and 2x2
// patch merging links consecutive stages.

#include <span>
#include <vector>

#include "itpn/config.hpp"
#include "itpn/layers.hpp"
#include "itpn/masking.hpp"

namespace itpn {

// U^0..U^S on visible tokens. levels[0] is the patch embedding (stage-1
// resolution); levels[s] is the last block output of stage s. Row order of
// levels[s] (s >= 1) follows spec->stage(s).visible; levels[0] follows stage 1.
struct StageFeatures {
  MaskSpecPtr spec;
  std::vector<Tensor> levels;

  std::size_t num_stages() const { return levels.empty() ? 0 : levels.size() - 1; }
  const Tensor& operator[](std::size_t s) const { return levels.at(s); }
};

// Pixels of the listed cells of a `patch`-sized grid over an [H x W x C]
// image, one flattened (row, col, channel) patch per output row.
Tensor extract_patches(const Tensor& image, std::size_t patch, std::span<const std::size_t> cells);

class Backbone {
 public:
  static Backbone init(const ModelConfig& cfg, Rng& rng);

  const ModelConfig& config() const { return cfg_; }

  Linear embed;
  Tensor pos_embed;  // constant [stage-1 grid x dim(1)]
  std::vector<std::vector<CmlpBlock>> cmlp_stages;  // stages 1..S-1
  std::vector<Linear> merges;                       // merges[s-1]: stage s -> s+1
  std::vector<AttentionBlock> attention_blocks;     // stage S

  // Parameters in a fixed order with layer ids: embedding 0, blocks 1..L in
  // forward order, a merge shares the id of the block that follows it.
  ParamList parameters() const;
  Backbone clone() const;

  StageFeatures forward(const Tensor& image, MaskSpecPtr spec) const;

 private:
  ModelConfig cfg_;
};

// Linear embedding of visible stage-1 patches plus fixed positional terms.
Tensor patch_embed(const Tensor& image, const MaskSpec& spec, const Backbone& net);

// Concatenates each visible 2x2 neighbourhood of stage `stage` and projects
// it to the next stage's width.
Tensor patch_merge(const Tensor& x, const MaskSpec& spec, std::size_t stage, const Linear& proj);

inline Tensor cmlp_block(const Tensor& x, const CmlpBlock& block) { return block.forward(x); }
inline Tensor attention_block(const Tensor& x, const AttentionBlock& block) { return block.forward(x); }

inline StageFeatures encoder_forward(const Tensor& image, MaskSpecPtr spec, const Backbone& net) {
  return net.forward(image, std::move(spec));
}

// For every visible token of stage s+1 (in row order), the rows of its four
// children in the stage-s visible list: (2i,2j), (2i,2j+1), (2i+1,2j), (2i+1,2j+1).
std::vector<std::size_t> merge_child_rows(const MaskSpec& spec, std::size_t stage);

}  // namespace itpn
