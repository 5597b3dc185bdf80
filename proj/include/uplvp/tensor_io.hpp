#pragma once

// ".ten" binary tensor files:
//   "UPLT" | version 0x01 | dtype 0x00 (f32 LE) | ndim | ndim x u32 LE dims | payload

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "uplvp/error.hpp"
#include "uplvp/tensor.hpp"

namespace uplvp::io {

inline constexpr std::array<char, 4> kTensorMagic = {'U', 'P', 'L', 'T'};
inline constexpr std::uint8_t kTensorVersion = 0x01;
inline constexpr std::uint8_t kDtypeF32 = 0x00;

using Bytes = std::vector<std::uint8_t>;

inline void put_u32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

inline Bytes encode_tensor(const Tensor& t) {
  if (t.rank() > 255) throw FormatError("tensor rank exceeds 255");
  Bytes out(kTensorMagic.begin(), kTensorMagic.end());
  out.push_back(kTensorVersion);
  out.push_back(kDtypeF32);
  out.push_back(static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape()) {
    if (d > UINT32_MAX) throw FormatError("tensor dimension exceeds u32");
    put_u32(out, static_cast<std::uint32_t>(d));
  }
  out.reserve(out.size() + 4 * t.size());
  for (float v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

/// Decodes one tensor starting at `offset`; advances `offset` past it.
inline Tensor decode_tensor(const Bytes& bytes, std::size_t& offset) {
  auto need = [&](std::size_t n) {
    if (bytes.size() < offset || bytes.size() - offset < n) {
      throw FormatError("truncated tensor data");
    }
  };
  need(7);
  if (std::memcmp(bytes.data() + offset, kTensorMagic.data(), 4) != 0) {
    throw FormatError("bad tensor magic");
  }
  if (bytes[offset + 4] != kTensorVersion) {
    throw FormatError("unsupported tensor version " + std::to_string(bytes[offset + 4]));
  }
  if (bytes[offset + 5] != kDtypeF32) {
    throw FormatError("unsupported tensor dtype " + std::to_string(bytes[offset + 5]));
  }
  const std::size_t ndim = bytes[offset + 6];
  offset += 7;
  need(4 * ndim);
  Shape shape(ndim);
  for (std::size_t i = 0; i < ndim; ++i) {
    shape[i] = get_u32(bytes.data() + offset);
    offset += 4;
  }
  const std::size_t n = shape_numel(shape);
  need(4 * n);
  std::vector<float> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    data[i] = std::bit_cast<float>(get_u32(bytes.data() + offset));
    offset += 4;
  }
  return Tensor(std::move(shape), std::move(data));
}

inline Bytes read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_bytes(const std::filesystem::path& path, const Bytes& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

inline void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  write_bytes(path, encode_tensor(t));
}

inline Tensor read_tensor(const std::filesystem::path& path) {
  const Bytes bytes = read_bytes(path);
  std::size_t offset = 0;
  Tensor t = decode_tensor(bytes, offset);
  if (offset != bytes.size()) throw FormatError("trailing bytes after tensor in " + path.string());
  return t;
}

}  // namespace uplvp::io
