#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace coda {

// Deterministic, platform-independent PRNG (xoshiro256**) with keyed
// substream derivation. Streams derived via child() are independent of
// how much the parent has been consumed, so parallel workers can each
// own a stream keyed by (seed, purpose, ordinal).
class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(uint64_t seed) { reseed(seed); }

  void reseed(uint64_t seed) {
    uint64_t x = seed;
    for (auto& w : s_) w = splitmix64(x);
  }

  // Derive an independent stream keyed by the parent state and a tag.
  Rng child(uint64_t a, uint64_t b = 0, uint64_t c = 0) const {
    uint64_t x = s_[0] ^ (s_[1] * 0x9E3779B97F4A7C15ull);
    x ^= mix(a ^ 0xA0761D6478BD642Full);
    x ^= mix(b ^ 0xE7037ED1A0B428DBull);
    x ^= mix(c ^ 0x8EBC6AF09C88C6E3ull);
    Rng r;
    r.reseed(x ^ s_[2] ^ (s_[3] << 1));
    return r;
  }
  Rng child(std::string_view tag, uint64_t a = 0, uint64_t b = 0) const {
    return child(fnv1a(tag), a, b);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [lo, hi) — hi exclusive, unbiased enough for our range sizes
  int64_t uniform_int(int64_t lo, int64_t hi) {
    return lo + int64_t(next_u64() % uint64_t(hi - lo));
  }

  // Box-Muller; one draw per call (the pair's second value is discarded
  // to keep streams stateless w.r.t. call parity).
  double normal(double mu = 0.0, double sigma = 1.0) {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mu + sigma * r * std::cos(6.283185307179586476925286766559 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = size_t(uniform_int(0, int64_t(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::string state_hex() const;
  void set_state_hex(const std::string& hex);

  static uint64_t fnv1a(std::string_view s) {
    uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001B3ull;
    }
    return h;
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  static uint64_t splitmix64(uint64_t& x) {
    uint64_t z = (x += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }
  static uint64_t mix(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  std::array<uint64_t, 4> s_{};
};

}  // namespace coda
