#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "itpn/data.hpp"
#include "itpn/error.hpp"
#include "itpn/reconstruct.hpp"

using namespace itpn;
namespace fs = std::filesystem;

namespace {

MaskSpecPtr sample(const ModelConfig& cfg, double ratio, std::uint64_t seed) {
  const auto f = cfg.stage_factors();
  return std::make_shared<const MaskSpec>(MaskSpec::sample({cfg.base_side(), cfg.base_side()}, ratio, seed, f));
}

}  // namespace

TEST(Reconstruct, VisibleUnitsKeptMaskedUnitsReplaced) {
  ModelConfig cfg;
  ItpnModel m = ItpnModel::init(cfg, 0);
  const Dataset d = generate_synthetic(2, 2, 3);
  const Tensor img = d.image(0);
  auto spec = sample(cfg, 0.75, 4);
  const Reconstruction r = reconstruct(img, spec, m);
  const std::size_t unit = cfg.unit_pixels();
  const auto o = r.original.data(), k = r.masked.data(), x = r.reconstructed.data();
  for (std::size_t y = 0; y < 64; ++y)
    for (std::size_t c = 0; c < 64; ++c) {
      const std::size_t u = (y / unit) * cfg.base_side() + c / unit;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const std::size_t i = (y * 64 + c) * 3 + ch;
        if (spec->unit_masked(u)) {
          ASSERT_EQ(k[i], 0.5);
        } else {
          ASSERT_EQ(k[i], o[i]);
          ASSERT_EQ(x[i], o[i]);
        }
      }
    }
  EXPECT_GT(r.masked_mse, 0.0);
  EXPECT_TRUE(current_tape().empty());
}

TEST(Reconstruct, NoMaskedUnitsMeansZeroError) {
  ModelConfig cfg;
  ItpnModel m = ItpnModel::init(cfg, 0);
  const Tensor img = generate_synthetic(2, 2, 3).image(1);
  const Reconstruction r = reconstruct(img, sample(cfg, 0.0, 1), m);
  EXPECT_EQ(r.masked_mse, 0.0);
  const auto a = r.reconstructed.data(), b = img.data();
  EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
}

TEST(Reconstruct, PpmLayout) {
  ModelConfig cfg;
  ItpnModel m = ItpnModel::init(cfg, 0);
  const fs::path path = fs::temp_directory_path() / "itpn_test_recon.ppm";
  dump_reconstruction(generate_synthetic(2, 2, 3).image(0), sample(cfg, 0.75, 2), m, path);
  std::ifstream in(path, std::ios::binary);
  std::string magic;
  std::size_t w = 0, h = 0, maxv = 0;
  in >> magic >> w >> h >> maxv;
  EXPECT_EQ(magic, "P6");
  EXPECT_EQ(w, 192u);
  EXPECT_EQ(h, 64u);
  EXPECT_EQ(maxv, 255u);
  EXPECT_EQ(fs::file_size(path), std::string("P6\n192 64\n255\n").size() + 192u * 64u * 3u);
  fs::remove(path);
}

TEST(Reconstruct, PanelsMustShareHeight) {
  std::vector<Tensor> panels{Tensor::zeros({4, 4, 3}), Tensor::zeros({5, 4, 3})};
  EXPECT_THROW(write_ppm(panels, fs::temp_directory_path() / "itpn_bad.ppm"), ContractError);
}
