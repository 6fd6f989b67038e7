#include "itpn/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "itpn/error.hpp"

namespace itpn {

namespace {

StageMask expand(GridExtents base, const std::vector<char>& unit_masked, std::size_t factor) {
  StageMask st;
  st.factor = factor;
  st.grid = {base.height * factor, base.width * factor};
  const std::size_t n = st.grid.size();
  st.visible_row.assign(n, kNoRow);
  st.masked_row.assign(n, kNoRow);
  for (std::size_t idx = 0; idx < n; ++idx) {
    const std::size_t r = idx / st.grid.width, c = idx % st.grid.width;
    const std::size_t unit = (r / factor) * base.width + (c / factor);
    if (unit_masked[unit]) {
      st.masked_row[idx] = static_cast<std::ptrdiff_t>(st.masked.size());
      st.masked.push_back(idx);
    } else {
      st.visible_row[idx] = static_cast<std::ptrdiff_t>(st.visible.size());
      st.visible.push_back(idx);
    }
  }
  return st;
}

void check_grid(GridExtents grid) {
  if (grid.height == 0 || grid.width == 0) throw ConfigError("mask grid extents must be positive");
}

}  // namespace

MaskSpec MaskSpec::from_units(GridExtents base_grid, std::vector<std::size_t> masked_units,
                              std::span<const std::size_t> stage_factors) {
  check_grid(base_grid);
  MaskSpec spec;
  spec.base_grid_ = base_grid;
  spec.unit_is_masked_.assign(base_grid.size(), 0);
  std::sort(masked_units.begin(), masked_units.end());
  for (auto u : masked_units) {
    if (u >= base_grid.size()) throw IndexError("mask unit " + std::to_string(u) + " outside base grid");
    if (spec.unit_is_masked_[u]) throw IndexError("duplicate mask unit " + std::to_string(u));
    spec.unit_is_masked_[u] = 1;
  }
  spec.masked_units_ = std::move(masked_units);
  spec.ratio_ = static_cast<double>(spec.masked_units_.size()) / static_cast<double>(base_grid.size());
  for (auto f : stage_factors) {
    if (f == 0) throw ConfigError("stage factor must be at least 1");
    spec.stages_.push_back(expand(base_grid, spec.unit_is_masked_, f));
  }
  return spec;
}

MaskSpec MaskSpec::sample(GridExtents base_grid, double ratio, std::uint64_t seed,
                          std::span<const std::size_t> stage_factors) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("mask ratio " + std::to_string(ratio) + " outside [0, 1]");
  check_grid(base_grid);
  const std::size_t n = base_grid.size();
  const auto k = static_cast<std::size_t>(std::lround(ratio * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  // Fisher-Yates prefix of length k.
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  order.resize(k);
  MaskSpec spec = from_units(base_grid, std::move(order), stage_factors);
  spec.ratio_ = ratio;
  return spec;
}

MaskSpec MaskSpec::dense(GridExtents base_grid, std::span<const std::size_t> stage_factors) {
  return from_units(base_grid, {}, stage_factors);
}

MaskSpec MaskSpec::complement() const {
  std::vector<std::size_t> units;
  for (std::size_t u = 0; u < base_grid_.size(); ++u)
    if (!unit_is_masked_[u]) units.push_back(u);
  std::vector<std::size_t> factors;
  for (const auto& st : stages_) factors.push_back(st.factor);
  return from_units(base_grid_, std::move(units), factors);
}

const StageMask& MaskSpec::stage(std::size_t s) const {
  if (s == 0 || s > stages_.size()) {
    throw IndexError("stage " + std::to_string(s) + " outside 1.." + std::to_string(stages_.size()));
  }
  return stages_[s - 1];
}

std::vector<std::size_t> align_mask_to_stage(const MaskSpec& spec, std::size_t factor) {
  if (factor == 0) throw ConfigError("alignment factor must be at least 1");
  const auto base = spec.base_grid();
  const std::size_t w = base.width * factor;
  std::vector<std::size_t> out;
  out.reserve(spec.masked_units().size() * factor * factor);
  for (auto unit : spec.masked_units()) {
    const std::size_t ur = unit / base.width, uc = unit % base.width;
    for (std::size_t dr = 0; dr < factor; ++dr)
      for (std::size_t dc = 0; dc < factor; ++dc) out.push_back((ur * factor + dr) * w + uc * factor + dc);
  }
  std::sort(out.begin(), out.end());
  return out;
}

Tensor complement_with_mask_tokens(const Tensor& v, const MaskSpec& spec, std::size_t stage, const Tensor& mask_token,
                                   const Tensor& pos_embed) {
  const StageMask& st = spec.stage(stage);
  if (v.rank() != 2 || v.extent(0) != st.visible.size()) {
    throw ContractError("complement_with_mask_tokens: " + shape_str(v.shape()) + " rows vs " +
                        std::to_string(st.visible.size()) + " visible tokens at stage " + std::to_string(stage));
  }
  const std::size_t total = st.grid.size();
  Tensor dense = place_tokens(v, st.visible, mask_token, total);
  if (!pos_embed.defined() || st.masked.empty()) return dense;
  const std::size_t d = mask_token.numel();
  if (pos_embed.numel() != total * d) {
    throw DimensionError("complement_with_mask_tokens: positional table " + shape_str(pos_embed.shape()) +
                         " for a " + std::to_string(total) + "x" + std::to_string(d) + " grid");
  }
  // constant positional term on masked rows only
  std::vector<Scalar> extra(total * d, 0.0);
  const auto pe = pos_embed.data();
  for (auto idx : st.masked)
    std::copy_n(pe.begin() + static_cast<std::ptrdiff_t>(idx * d), d, extra.begin() + static_cast<std::ptrdiff_t>(idx * d));
  return add(dense, Tensor({total, d}, std::move(extra)));
}

}  // namespace itpn
