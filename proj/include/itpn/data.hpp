#pragma once

// Image datasets on disk and in memory.
//
//   magic       7 bytes "ITPNDS1"
//   N, H, W, C  u32 each
//   has_labels  u8 (0 or 1)
//   pixels      N*H*W*C f32 in [0, 1], NHWC
//   labels      N u16 when has_labels = 1
//
// Little-endian throughout.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "itpn/tensor.hpp"

namespace itpn {

struct Dataset {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<float> pixels;  // NHWC
  std::optional<std::vector<std::uint16_t>> labels;

  std::size_t size() const;
  std::size_t image_numel() const { return height * width * channels; }
  // [H x W x C] tensor of image i.
  Tensor image(std::size_t i, bool flip_horizontal = false) const;
  int label(std::size_t i) const;

  bool operator==(const Dataset&) const = default;
};

// Balanced classes (label = i mod classes): class-dependent oriented gratings,
// a class-coloured blob at a random spot, and pixel noise, clamped to [0, 1].
Dataset generate_synthetic(std::size_t n, std::size_t classes, std::uint64_t seed, std::size_t image_size = 64,
                           std::size_t channels = 3);

std::string encode_dataset(const Dataset& data);
Dataset decode_dataset(const std::string& bytes);
void save_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

// Images [begin, end) as a new dataset.
Dataset slice(const Dataset& data, std::size_t begin, std::size_t end);

}  // namespace itpn
