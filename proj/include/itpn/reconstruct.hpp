#pragma once

#include <filesystem>
#include <span>

#include "itpn/model.hpp"

namespace itpn {

struct Reconstruction {
  Tensor original;       // [H x W x C]
  Tensor masked;         // visible units kept, masked units grey
  Tensor reconstructed;  // visible units kept, masked units predicted
  double masked_mse = 0.0;  // pixel-space MSE over masked units, 0 when none
};

// Decoder predictions at masked units, un-normalized with each unit's own
// mean and standard deviation in the original image.
Reconstruction reconstruct(const Tensor& image, const MaskSpecPtr& spec, const ItpnModel& model);

// Binary PPM (P6) of the panels placed side by side; values clamp to [0, 1].
// Panels must share a height and have 1 or 3 channels.
void write_ppm(std::span<const Tensor> panels, const std::filesystem::path& path);

// original | masked | reconstructed
Reconstruction dump_reconstruction(const Tensor& image, const MaskSpecPtr& spec, const ItpnModel& model,
                                   const std::filesystem::path& path);

}  // namespace itpn
