#pragma once

// Saliency map serialization. DCLS layout (all little-endian):
//   bytes 0-3   magic "DCLS"
//   bytes 4-7   u32 width
//   bytes 8-11  u32 height
//   bytes 12-15 u32 reserved (0)
//   then width*height f32 values, row-major.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>

#include "dclose/core.hpp"

namespace dclose {

namespace detail {

inline void put_u32le(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

inline std::uint32_t get_u32le(const unsigned char* b) {
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace detail

inline void write_dcls(std::ostream& os, const Grid<float>& m) {
  os.write("DCLS", 4);
  detail::put_u32le(os, static_cast<std::uint32_t>(m.width));
  detail::put_u32le(os, static_cast<std::uint32_t>(m.height));
  detail::put_u32le(os, 0);
  for (float v : m.values) detail::put_u32le(os, std::bit_cast<std::uint32_t>(v));
  if (!os) throw std::runtime_error("failed to write DCLS data");
}

inline SaliencyMap read_dcls(std::istream& is) {
  std::array<unsigned char, 16> header{};
  if (!is.read(reinterpret_cast<char*>(header.data()), header.size()))
    throw InvalidInput("DCLS: truncated header");
  if (std::memcmp(header.data(), "DCLS", 4) != 0) throw InvalidInput("DCLS: bad magic");
  const std::uint32_t w = detail::get_u32le(header.data() + 4);
  const std::uint32_t h = detail::get_u32le(header.data() + 8);
  if (w > (1u << 16) || h > (1u << 16)) throw InvalidInput("DCLS: implausible dimensions");
  SaliencyMap m(static_cast<int>(w), static_cast<int>(h));
  std::array<unsigned char, 4> b{};
  for (float& v : m.values) {
    if (!is.read(reinterpret_cast<char*>(b.data()), 4)) throw InvalidInput("DCLS: truncated data");
    v = std::bit_cast<float>(detail::get_u32le(b.data()));
  }
  float lo = std::numeric_limits<float>::max(), hi = std::numeric_limits<float>::lowest();
  for (float v : m.values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  m.normalized = !m.values.empty() && lo == 0.0f && (hi == 1.0f || hi == 0.0f);
  return m;
}

inline void save_dcls(const std::string& path, const Grid<float>& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_dcls(os, m);
}

inline SaliencyMap load_dcls(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InvalidInput("cannot open " + path);
  return read_dcls(is);
}

// One CSV row per image row; shortest round-trip float formatting.
inline void write_grid_csv(std::ostream& os, const Grid<float>& m) {
  std::ostringstream line;
  line << std::setprecision(std::numeric_limits<float>::max_digits10);
  for (int y = 0; y < m.height; ++y) {
    line.str({});
    for (int x = 0; x < m.width; ++x) {
      if (x) line << ',';
      line << m.at(x, y);
    }
    os << line.str() << '\n';
  }
}

inline void save_grid_csv(const std::string& path, const Grid<float>& m) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_grid_csv(os, m);
}

}  // namespace dclose
