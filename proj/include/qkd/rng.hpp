#pragma once

#include <cstdint>

namespace qkd {

/// 64-bit finalizer used to derive independent stream seeds.
inline std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ULL;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return z;
}

/// Seed for an independent substream (frame, sweep point, ...) of a master seed.
inline std::uint64_t derive_stream_seed(std::uint64_t master, std::uint64_t stream) {
  return mix64(master ^ mix64((stream + 1) * 0x9E3779B97F4A7C15ULL));
}

/// xoshiro256++ generator: 256-bit state, seeded through a splitmix64 chain.
/// Streams derived via derive_stream_seed are statistically independent, so
/// per-frame simulation results do not depend on the execution order.
class Xoshiro256pp {
 public:
  using result_type = std::uint64_t;

  explicit Xoshiro256pp(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& word : state_) {
      x += 0x9E3779B97F4A7C15ULL;
      word = mix64(x);
    }
  }

  static Xoshiro256pp for_stream(std::uint64_t master, std::uint64_t stream) {
    return Xoshiro256pp(derive_stream_seed(master, stream));
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }

  result_type operator()() {
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

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::uint64_t state_[4];
};

}  // namespace qkd
