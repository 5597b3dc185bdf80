#pragma once

// Binary greymap (P5, maxval 255) reading and writing.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "uplvp/error.hpp"
#include "uplvp/tensor.hpp"

namespace uplvp::pgm {

struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;
};

inline std::vector<std::uint8_t> encode(const Image& img) {
  const std::string header = "P5\n" + std::to_string(img.width) + ' ' + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

inline void write(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  const auto bytes = encode(img);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline Image read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  auto token = [&]() {
    std::string tok;
    int ch;
    while ((ch = in.get()) != EOF) {
      if (ch == '#') {
        while ((ch = in.get()) != EOF && ch != '\n') {}
        continue;
      }
      if (std::isspace(ch)) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(static_cast<char>(ch));
    }
    return tok;
  };
  if (token() != "P5") throw FormatError("not a P5 greymap: " + path.string());
  Image img;
  try {
    img.width = std::stoul(token());
    img.height = std::stoul(token());
    if (std::stoul(token()) != 255) throw FormatError("greymap maxval must be 255");
  } catch (const std::logic_error&) {
    throw FormatError("malformed greymap header: " + path.string());
  }
  img.pixels.resize(img.width * img.height);
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (static_cast<std::size_t>(in.gcount()) != img.pixels.size()) {
    throw FormatError("truncated greymap: " + path.string());
  }
  return img;
}

/// Binary mask (nonzero = foreground) to a 0/255 image.
inline Image from_mask(const Tensor& mask) {
  require_rank(mask.shape(), 2, "pgm::from_mask");
  Image img{mask.dim(0), mask.dim(1), {}};
  img.pixels.reserve(mask.size());
  for (float v : mask.data()) img.pixels.push_back(v != 0.0f ? 255 : 0);
  return img;
}

/// Values in [0,1] scaled by 255 and rounded.
inline Image from_heatmap(const Tensor& map) {
  require_rank(map.shape(), 2, "pgm::from_heatmap");
  Image img{map.dim(0), map.dim(1), {}};
  img.pixels.reserve(map.size());
  for (float v : map.data()) {
    const double clamped = std::clamp(static_cast<double>(v), 0.0, 1.0);
    img.pixels.push_back(static_cast<std::uint8_t>(std::lround(clamped * 255.0)));
  }
  return img;
}

/// 255 = foreground, anything else background.
inline Tensor to_mask(const Image& img) {
  Tensor mask(Shape{img.height, img.width});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) mask[i] = img.pixels[i] == 255 ? 1.0f : 0.0f;
  return mask;
}

}  // namespace uplvp::pgm
