#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "itpn/tensor.hpp"

namespace itpn {

struct GridExtents {
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t size() const { return height * width; }
  bool operator==(const GridExtents&) const = default;
};

inline constexpr std::ptrdiff_t kNoRow = -1;

// One stage's view of the mask. Indices are row-major flat positions on the
// stage grid; `visible` is also the row order of sparse token matrices.
struct StageMask {
  std::size_t factor = 1;  // stage tokens per mask unit side
  GridExtents grid;
  std::vector<std::size_t> visible;
  std::vector<std::size_t> masked;
  std::vector<std::ptrdiff_t> visible_row;  // grid index -> row in `visible`, or kNoRow
  std::vector<std::ptrdiff_t> masked_row;   // grid index -> row in `masked`, or kNoRow
};

// Mask sampled on the coarsest grid (mask units) and expanded block-wise to
// every finer stage. Stages are numbered 1..S from finest to coarsest.
class MaskSpec {
 public:
  // stage_factors[s-1] is stage s's expansion factor; the last one must be 1
  // for the usual hierarchy but any positive factors are accepted.
  static MaskSpec sample(GridExtents base_grid, double ratio, std::uint64_t seed,
                         std::span<const std::size_t> stage_factors);
  static MaskSpec from_units(GridExtents base_grid, std::vector<std::size_t> masked_units,
                             std::span<const std::size_t> stage_factors);
  static MaskSpec dense(GridExtents base_grid, std::span<const std::size_t> stage_factors);

  // Same geometry with visible and masked units swapped.
  MaskSpec complement() const;

  GridExtents base_grid() const { return base_grid_; }
  double ratio() const { return ratio_; }
  const std::vector<std::size_t>& masked_units() const { return masked_units_; }
  bool unit_masked(std::size_t unit) const { return unit_is_masked_[unit] != 0; }
  std::size_t num_stages() const { return stages_.size(); }
  const StageMask& stage(std::size_t s) const;

 private:
  GridExtents base_grid_;
  double ratio_ = 0.0;
  std::vector<std::size_t> masked_units_;
  std::vector<char> unit_is_masked_;
  std::vector<StageMask> stages_;
};

using MaskSpecPtr = std::shared_ptr<const MaskSpec>;

// Block expansion of the masked units onto a grid `factor` times finer.
std::vector<std::size_t> align_mask_to_stage(const MaskSpec& spec, std::size_t factor);

// Dense [h*w x d] grid: visible rows from v, masked rows mask_token + pos_embed[row].
// pos_embed is a constant [h*w x d] table (or undefined to skip).
Tensor complement_with_mask_tokens(const Tensor& v, const MaskSpec& spec, std::size_t stage, const Tensor& mask_token,
                                   const Tensor& pos_embed);

}  // namespace itpn
