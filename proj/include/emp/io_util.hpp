#pragma once

// Little-endian binary helpers shared by the checkpoint and dataset formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <ostream>
#include <span>
#include <string>

#include "emp/errors.hpp"

namespace emp {

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian hosts are not supported");

inline std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap32(v);
  return v;
}
inline std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap64(v);
  return v;
}

inline void write_u64_le(std::ostream& out, std::uint64_t v) {
  v = to_le(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline std::uint64_t read_u64_le(const char* p) {
  std::uint64_t v;
  std::memcpy(&v, p, sizeof(v));
  return to_le(v);
}

inline void write_f32_le(std::ostream& out, std::span<const float> values) {
  for (float f : values) {
    const std::uint32_t bits = to_le(std::bit_cast<std::uint32_t>(f));
    out.write(reinterpret_cast<const char*>(&bits), sizeof(bits));
  }
}

inline float read_f32_le(const char* p) {
  std::uint32_t bits;
  std::memcpy(&bits, p, sizeof(bits));
  return std::bit_cast<float>(to_le(bits));
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path + ": cannot open file");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace emp
