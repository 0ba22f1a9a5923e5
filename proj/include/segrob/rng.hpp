#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace segrob {

// xoshiro256++ with splitmix64 seeding. Deterministic and platform independent,
// unlike the std:: distributions, so seeds reproduce bit-exact runs everywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& s : state_) s = splitmix64(x);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) {
    // rejection sampling to avoid modulo bias
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

  bool coin() { return (next_u64() & 1u) != 0; }

  static std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

 private:
  static std::uint64_t rotl(std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }
  std::uint64_t state_[4];
};

/// Named sub-stream seed derivation: all randomness flows from one root seed,
/// components draw from independent streams keyed by a tag.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view tag) {
  std::uint64_t x = root;
  Rng::splitmix64(x);
  for (char c : tag) {
    x ^= std::uint64_t(static_cast<unsigned char>(c));
    Rng::splitmix64(x);
  }
  return Rng::splitmix64(x);
}

inline std::uint64_t derive_seed(std::uint64_t root, std::string_view tag, std::uint64_t index) {
  std::uint64_t x = derive_seed(root, tag);
  x ^= index;
  return Rng::splitmix64(x);
}

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = std::size_t(rng.uniform_index(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace segrob
