#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "gpderain/error.hpp"

namespace gpderain::binio {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const char* what) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) fail(ErrorKind::Format, std::string("truncated input while reading ") + what);
  return value;
}

inline void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in, const char* what, std::uint32_t max_len = 1u << 20) {
  const auto len = get<std::uint32_t>(in, what);
  if (len > max_len) fail(ErrorKind::Format, std::string("implausible string length for ") + what);
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) fail(ErrorKind::Format, std::string("truncated input while reading ") + what);
  return s;
}

inline void put_doubles(std::ostream& out, std::span<const double> values) {
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
}

inline std::vector<double> get_doubles(std::istream& in, std::size_t count, const char* what) {
  std::vector<double> values(count);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) fail(ErrorKind::Format, std::string("truncated input while reading ") + what);
  return values;
}

inline void expect_magic(std::istream& in, const char (&magic)[5], const char* what) {
  char buf[4] = {};
  in.read(buf, 4);
  if (!in || std::memcmp(buf, magic, 4) != 0) fail(ErrorKind::Format, std::string("bad magic in ") + what);
}

/// FNV-1a, 64 bit.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace gpderain::binio
