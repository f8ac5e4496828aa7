#include "coda/rng.hpp"

#include <cstdio>
#include <stdexcept>

namespace coda {

std::string Rng::state_hex() const {
  char buf[72];
  std::snprintf(buf, sizeof buf, "%016llx%016llx%016llx%016llx",
                (unsigned long long)s_[0], (unsigned long long)s_[1],
                (unsigned long long)s_[2], (unsigned long long)s_[3]);
  return std::string(buf);
}

void Rng::set_state_hex(const std::string& hex) {
  if (hex.size() != 64) throw std::invalid_argument("rng state hex must be 64 chars");
  for (int i = 0; i < 4; ++i) {
    uint64_t v = 0;
    for (int j = 0; j < 16; ++j) {
      char c = hex[size_t(i * 16 + j)];
      v <<= 4;
      if (c >= '0' && c <= '9') v |= uint64_t(c - '0');
      else if (c >= 'a' && c <= 'f') v |= uint64_t(c - 'a' + 10);
      else if (c >= 'A' && c <= 'F') v |= uint64_t(c - 'A' + 10);
      else throw std::invalid_argument("bad hex digit in rng state");
    }
    s_[size_t(i)] = v;
  }
}

}  // namespace coda
