#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "mivise/errors.hpp"

namespace mivise::io {

// Little-endian primitives shared by the feature and checkpoint formats.

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f32(std::ostream& os, float f) { put_u32(os, std::bit_cast<std::uint32_t>(f)); }

inline void put_bytes(std::ostream& os, const std::string& s) { os.write(s.data(), static_cast<std::streamsize>(s.size())); }

/// Reader that turns short reads into FormatError with a caller-supplied context.
class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}

  bool read_raw(char* dst, std::size_t n) {
    is_.read(dst, static_cast<std::streamsize>(n));
    return static_cast<std::size_t>(is_.gcount()) == n;
  }

  std::uint32_t u32(const std::string& context) {
    unsigned char b[4];
    if (!read_raw(reinterpret_cast<char*>(b), 4)) throw FormatError("truncated file: " + context);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }

  float f32(const std::string& context) { return std::bit_cast<float>(u32(context)); }

  std::string bytes(std::size_t n, const std::string& context) {
    std::string s(n, '\0');
    if (n > 0 && !read_raw(s.data(), n)) throw FormatError("truncated file: " + context);
    return s;
  }

  /// Bulk float read; fast path on little-endian hosts.
  void f32_array(float* dst, std::size_t n, const std::string& context) {
    if constexpr (std::endian::native == std::endian::little) {
      if (n > 0 && !read_raw(reinterpret_cast<char*>(dst), n * sizeof(float))) {
        throw FormatError("truncated file: " + context);
      }
    } else {
      for (std::size_t i = 0; i < n; ++i) dst[i] = f32(context);
    }
  }

  bool at_end() { return is_.peek() == std::char_traits<char>::eof(); }

 private:
  std::istream& is_;
};

inline void put_f32_array(std::ostream& os, const float* src, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(src), static_cast<std::streamsize>(n * sizeof(float)));
  } else {
    for (std::size_t i = 0; i < n; ++i) put_f32(os, src[i]);
  }
}

}  // namespace mivise::io
