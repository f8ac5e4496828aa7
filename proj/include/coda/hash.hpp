#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string>

namespace coda {

// FNV-1a over raw bytes; used for frozen-partition checks and file checksums.
inline uint64_t fnv1a_bytes(const void* data, size_t n, uint64_t h = 0xCBF29CE484222325ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ull;
  }
  return h;
}

inline uint64_t fnv1a_doubles(std::span<const double> v, uint64_t h = 0xCBF29CE484222325ull) {
  return fnv1a_bytes(v.data(), v.size() * sizeof(double), h);
}

std::string hex_u64(uint64_t v);
uint64_t file_checksum(const std::string& path);  // throws IOFailure

}  // namespace coda
