#ifndef ITGAN_WIRE_HPP
#define ITGAN_WIRE_HPP

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "itgan/base.hpp"

// Little-endian stream primitives for the on-disk formats. All reads check
// for truncation and raise config errors naming the failing field.

namespace itgan::wire {

inline void put_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void put_u16(std::ostream& os, uint16_t v) {
  uint8_t b[2] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8)};
  put_bytes(os, b, 2);
}

inline void put_u32(std::ostream& os, uint32_t v) {
  uint8_t b[4];
  for (int i = 0; i < 4; i++) b[i] = static_cast<uint8_t>(v >> (8 * i));
  put_bytes(os, b, 4);
}

inline void put_u64(std::ostream& os, uint64_t v) {
  uint8_t b[8];
  for (int i = 0; i < 8; i++) b[i] = static_cast<uint8_t>(v >> (8 * i));
  put_bytes(os, b, 8);
}

inline void put_f32(std::ostream& os, float v) { put_u32(os, std::bit_cast<uint32_t>(v)); }

inline void get_bytes(std::istream& is, void* p, size_t n, const char* what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  ITGAN_CHECK(static_cast<size_t>(is.gcount()) == n, ErrorKind::config,
              std::string("file truncated at ") + what);
}

inline uint16_t get_u16(std::istream& is, const char* what) {
  uint8_t b[2];
  get_bytes(is, b, 2, what);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

inline uint32_t get_u32(std::istream& is, const char* what) {
  uint8_t b[4];
  get_bytes(is, b, 4, what);
  uint32_t v = 0;
  for (int i = 0; i < 4; i++) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

inline uint64_t get_u64(std::istream& is, const char* what) {
  uint8_t b[8];
  get_bytes(is, b, 8, what);
  uint64_t v = 0;
  for (int i = 0; i < 8; i++) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

inline float get_f32(std::istream& is, const char* what) {
  return std::bit_cast<float>(get_u32(is, what));
}

inline void check_magic(std::istream& is, const char* magic, const std::string& path) {
  char got[4];
  is.read(got, 4);
  ITGAN_CHECK(is.gcount() == 4 && std::string(got, 4) == magic, ErrorKind::config,
              "bad magic in " + path + " (expected " + magic + ")");
}

}  // namespace itgan::wire

#endif  // ITGAN_WIRE_HPP
