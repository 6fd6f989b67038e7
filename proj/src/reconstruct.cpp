#include "itpn/reconstruct.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "itpn/error.hpp"

namespace itpn {

Reconstruction reconstruct(const Tensor& image, const MaskSpecPtr& spec, const ItpnModel& model) {
  const auto& cfg = model.cfg;
  NoGradGuard no_grad;
  const std::size_t unit = cfg.unit_pixels();
  const std::size_t C = cfg.channels;
  const std::size_t W = cfg.image_size;
  const std::size_t units_per_row = spec->base_grid().width;

  StageFeatures u = model.backbone.forward(image, spec);
  PyramidFeatures v = model.neck.forward(u);
  Tensor decoded = mim_decode(fuse_for_decoder(v, *spec, model.heads.fuse), model.heads.decoder);
  Tensor pred = masked_pixel_predictions(decoded, *spec);

  Reconstruction r;
  r.original = image.detach();
  r.masked = image.detach();
  r.reconstructed = image.detach();
  const auto src = image.data();
  auto masked = r.masked.data();
  auto recon = r.reconstructed.data();
  const auto units = spec->masked_units();
  const std::size_t width = unit * unit * C;
  double sq = 0.0;
  for (std::size_t m = 0; m < units.size(); ++m) {
    const std::size_t uy = units[m] / units_per_row, ux = units[m] % units_per_row;
    auto offset = [&](std::size_t j) {
      const std::size_t py = j / (unit * C), px = (j / C) % unit, c = j % C;
      return ((uy * unit + py) * W + ux * unit + px) * C + c;
    };
    double mu = 0.0;
    for (std::size_t j = 0; j < width; ++j) mu += src[offset(j)];
    mu /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t j = 0; j < width; ++j) var += (src[offset(j)] - mu) * (src[offset(j)] - mu);
    const double sd = std::sqrt(var / static_cast<double>(width) + 1e-6);
    for (std::size_t j = 0; j < width; ++j) {
      const std::size_t o = offset(j);
      const double value = pred.at(m, j) * sd + mu;
      recon[o] = value;
      masked[o] = 0.5;
      sq += (value - src[o]) * (value - src[o]);
    }
  }
  r.masked_mse = units.empty() ? 0.0 : sq / static_cast<double>(units.size() * width);
  return r;
}

void write_ppm(std::span<const Tensor> panels, const std::filesystem::path& path) {
  if (panels.empty()) throw ContractError("write_ppm needs at least one panel");
  const std::size_t H = panels[0].extent(0);
  std::size_t total_w = 0;
  for (const auto& p : panels) {
    if (p.rank() != 3 || p.extent(0) != H || (p.extent(2) != 1 && p.extent(2) != 3)) {
      throw ContractError("write_ppm: panel " + shape_str(p.shape()) + " is not [" + std::to_string(H) + " x W x 1|3]");
    }
    total_w += p.extent(1);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "P6\n" << total_w << ' ' << H << "\n255\n";
  for (std::size_t y = 0; y < H; ++y) {
    for (const auto& p : panels) {
      const std::size_t w = p.extent(1), c = p.extent(2);
      const auto d = p.data();
      for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t k = 0; k < 3; ++k) {
          const double v = d[(y * w + x) * c + (c == 3 ? k : 0)];
          out.put(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
        }
      }
    }
  }
  if (!out) throw Error("write failed for " + path.string());
}

Reconstruction dump_reconstruction(const Tensor& image, const MaskSpecPtr& spec, const ItpnModel& model,
                                   const std::filesystem::path& path) {
  Reconstruction r = reconstruct(image, spec, model);
  const Tensor panels[] = {r.original, r.masked, r.reconstructed};
  write_ppm(panels, path);
  return r;
}

}  // namespace itpn
