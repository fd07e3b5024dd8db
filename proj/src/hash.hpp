#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <string_view>

namespace lemix {

// FNV-1a, 64 bit.
struct Fnv {
  std::uint64_t h = 1469598103934665603ULL;

  void add_byte(unsigned char b) {
    h ^= b;
    h *= 1099511628211ULL;
  }
  template <class T>
  void add(T v) {
    for (unsigned char b : std::bit_cast<std::array<unsigned char, sizeof(T)>>(v)) add_byte(b);
  }
  void add(std::string_view s) {
    for (char c : s) add_byte(static_cast<unsigned char>(c));
  }
};

}  // namespace lemix
