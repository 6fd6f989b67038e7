#include "itpn/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "itpn/error.hpp"

namespace itpn {

namespace {

constexpr char kMagic[7] = {'I', 'T', 'P', 'N', 'D', 'S', '1'};
constexpr std::size_t kHeaderBytes = 7 + 4 * 4 + 1;

template <typename T>
void put(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

template <typename T>
T get(const std::string& bytes, std::size_t pos) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    v |= static_cast<T>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
  return v;
}

}  // namespace

std::size_t Dataset::size() const { return image_numel() == 0 ? 0 : pixels.size() / image_numel(); }

Tensor Dataset::image(std::size_t i, bool flip_horizontal) const {
  if (i >= size()) throw IndexError("image " + std::to_string(i) + " of " + std::to_string(size()));
  std::vector<Scalar> v(image_numel());
  const float* src = pixels.data() + i * image_numel();
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t sx = flip_horizontal ? width - 1 - x : x;
      for (std::size_t c = 0; c < channels; ++c)
        v[(y * width + x) * channels + c] = src[(y * width + sx) * channels + c];
    }
  }
  return Tensor({height, width, channels}, std::move(v));
}

int Dataset::label(std::size_t i) const {
  if (!labels) throw ContractError("dataset has no labels");
  return labels->at(i);
}

Dataset generate_synthetic(std::size_t n, std::size_t classes, std::uint64_t seed, std::size_t image_size,
                           std::size_t channels) {
  if (classes < 2 || n < classes) {
    throw ConfigError("generate_synthetic needs n >= classes >= 2 (got n=" + std::to_string(n) +
                      ", classes=" + std::to_string(classes) + ")");
  }
  if (image_size == 0 || channels == 0) throw ConfigError("generate_synthetic: empty image geometry");
  if (classes > 65535) throw ConfigError("at most 65535 classes fit a u16 label");
  Dataset d;
  d.height = d.width = image_size;
  d.channels = channels;
  d.pixels.resize(n * d.image_numel());
  d.labels.emplace(n);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.05);
  const double side = static_cast<double>(image_size);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t cls = i % classes;
    (*d.labels)[i] = static_cast<std::uint16_t>(cls);
    // Orientation carries the class; everything else is nuisance.
    const double theta = std::numbers::pi * (static_cast<double>(cls) + 0.3 * (u01(rng) - 0.5)) /
                         static_cast<double>(classes);
    const double freq = 2.0 * std::numbers::pi * (0.08 + 0.12 * u01(rng));
    const double phase = 2.0 * std::numbers::pi * u01(rng);
    const double contrast = 0.15 + 0.2 * u01(rng);
    std::vector<double> base(channels), tint(channels), blob(channels);
    for (std::size_t c = 0; c < channels; ++c) {
      base[c] = 0.3 + 0.4 * u01(rng);
      tint[c] = 0.5 + 0.5 * u01(rng);
      blob[c] = u01(rng);
    }
    const double bx = side * u01(rng), by = side * u01(rng);
    const double br = side * (0.08 + 0.12 * u01(rng));
    const double ct = std::cos(theta), st = std::sin(theta);
    float* img = d.pixels.data() + i * d.image_numel();
    for (std::size_t y = 0; y < image_size; ++y) {
      for (std::size_t x = 0; x < image_size; ++x) {
        const double fx = static_cast<double>(x), fy = static_cast<double>(y);
        const double g = contrast * std::sin(freq * (fx * ct + fy * st) + phase);
        const double dist2 = (fx - bx) * (fx - bx) + (fy - by) * (fy - by);
        const double w = std::exp(-dist2 / (2.0 * br * br));
        for (std::size_t c = 0; c < channels; ++c) {
          double v = base[c] + g * tint[c];
          v = (1.0 - w) * v + w * blob[c] + noise(rng);
          img[(y * image_size + x) * channels + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
    }
  }
  return d;
}

std::string encode_dataset(const Dataset& data) {
  const std::size_t n = data.size();
  if (n * data.image_numel() != data.pixels.size()) throw ContractError("dataset pixel count is not a whole image count");
  if (data.labels && data.labels->size() != n) throw ContractError("dataset label count differs from image count");
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(n));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(data.height));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(data.width));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(data.channels));
  put<std::uint8_t>(out, data.labels ? 1 : 0);
  out.reserve(out.size() + data.pixels.size() * 4 + (data.labels ? n * 2 : 0));
  for (float p : data.pixels) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(p));
  if (data.labels)
    for (auto l : *data.labels) put<std::uint16_t>(out, l);
  return out;
}

Dataset decode_dataset(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw LoadError(LoadErrorKind::bad_magic, "not a dataset file (bad magic)");
  }
  if (bytes.size() < kHeaderBytes) {
    throw LoadError(LoadErrorKind::size_mismatch, "dataset header needs " + std::to_string(kHeaderBytes) +
                                                      " bytes, file has " + std::to_string(bytes.size()));
  }
  const auto n = get<std::uint32_t>(bytes, 7);
  Dataset d;
  d.height = get<std::uint32_t>(bytes, 11);
  d.width = get<std::uint32_t>(bytes, 15);
  d.channels = get<std::uint32_t>(bytes, 19);
  const auto has_labels = get<std::uint8_t>(bytes, 23);
  if (has_labels > 1) throw LoadError(LoadErrorKind::parse, "has_labels flag is " + std::to_string(has_labels));
  const std::size_t count = static_cast<std::size_t>(n) * d.image_numel();
  const std::size_t expected = kHeaderBytes + count * 4 + (has_labels ? std::size_t{n} * 2 : 0);
  if (bytes.size() != expected) {
    throw LoadError(LoadErrorKind::size_mismatch, "dataset size mismatch: expected " + std::to_string(expected) +
                                                      " bytes, actual " + std::to_string(bytes.size()));
  }
  d.pixels.resize(count);
  std::size_t pos = kHeaderBytes;
  for (std::size_t i = 0; i < count; ++i, pos += 4) {
    const float p = std::bit_cast<float>(get<std::uint32_t>(bytes, pos));
    if (!(p >= 0.0f && p <= 1.0f)) {
      throw LoadError(LoadErrorKind::out_of_range,
                      "pixel " + std::to_string(i) + " is " + std::to_string(p) + ", outside [0, 1]");
    }
    d.pixels[i] = p;
  }
  if (has_labels) {
    d.labels.emplace(n);
    for (std::size_t i = 0; i < n; ++i, pos += 2) (*d.labels)[i] = get<std::uint16_t>(bytes, pos);
  }
  return d;
}

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
  const std::string bytes = encode_dataset(data);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(LoadErrorKind::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_dataset(ss.str());
}

Dataset slice(const Dataset& data, std::size_t begin, std::size_t end) {
  if (begin > end || end > data.size()) {
    throw IndexError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                     std::to_string(data.size()) + " images");
  }
  Dataset out;
  out.height = data.height;
  out.width = data.width;
  out.channels = data.channels;
  out.pixels.assign(data.pixels.begin() + static_cast<std::ptrdiff_t>(begin * data.image_numel()),
                    data.pixels.begin() + static_cast<std::ptrdiff_t>(end * data.image_numel()));
  if (data.labels) {
    out.labels.emplace(data.labels->begin() + static_cast<std::ptrdiff_t>(begin),
                       data.labels->begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

}  // namespace itpn
