#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <type_traits>

#include "clst/errors.hpp"

namespace clst::io {

template <typename T>
T to_little(T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

template <typename T>
void put(std::ostream& os, T v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const char* what) {
  T v;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw FormatError(std::string("truncated file while reading ") + what);
  }
  return to_little(v);
}

inline void put_bytes(std::ostream& os, std::string_view s) {
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_bytes(std::istream& is, std::size_t n, const char* what) {
  std::string s(n, '\0');
  if (n && !is.read(s.data(), static_cast<std::streamsize>(n))) {
    throw FormatError(std::string("truncated file while reading ") + what);
  }
  return s;
}

/// Magic is a tag followed by a one-character version, e.g. "CLSTDS1".
inline void check_magic(std::istream& is, std::string_view expected,
                        const char* kind) {
  std::string got(expected.size(), '\0');
  if (!is.read(got.data(), static_cast<std::streamsize>(got.size()))) {
    throw FormatError(std::string(kind) + ": file too short for magic");
  }
  if (got == expected) return;
  const auto tag = expected.substr(0, expected.size() - 1);
  if (std::string_view(got).substr(0, tag.size()) == tag) {
    throw VersionError(std::string(kind) + ": unsupported version '" +
                       got.back() + "' (expected '" + expected.back() + "')");
  }
  throw FormatError(std::string(kind) + ": bad magic");
}

}  // namespace clst::io
