#include "coda/hash.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "coda/errors.hpp"

namespace coda {

std::string hex_u64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

uint64_t file_checksum(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IOFailure("cannot open file for checksum: " + path);
  uint64_t h = 0xCBF29CE484222325ull;
  char buf[1 << 16];
  while (f) {
    f.read(buf, sizeof buf);
    std::streamsize n = f.gcount();
    if (n > 0) h = fnv1a_bytes(buf, size_t(n), h);
  }
  return h;
}

}  // namespace coda
