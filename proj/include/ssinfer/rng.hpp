#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>

namespace ssinfer {

// Deterministic, platform-independent randomness. All generators here are
// specified down to the bit so that a (seed, stream) pair reproduces the
// same draws on any platform; nothing from <random> is used because the
// standard leaves distribution algorithms unspecified.

namespace detail {

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

// splitmix64 finalizer (Steele, Lea, Flood 2014).
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

// splitmix64 stream; used for seeding and seed derivation.
struct SplitMix64 {
  std::uint64_t state;

  explicit SplitMix64(std::uint64_t seed) : state(seed) {}

  std::uint64_t next() {
    state += detail::kGolden;
    return detail::mix64(state);
  }
};

// Derives an independent child seed from a base seed and a stream path
// (e.g. {rep_index, purpose_tag}). Stable across platforms and runs.
inline std::uint64_t derive_seed(std::uint64_t base,
                                 std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = detail::mix64(base + detail::kGolden);
  for (std::uint64_t part : path) {
    s = detail::mix64(s ^ (part + detail::kGolden));
    s += detail::kGolden;
  }
  return s;
}

// xoshiro256** 1.0 (Blackman, Vigna), seeded through splitmix64.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    SplitMix64 sm(seed);
    for (auto& word : state_) word = sm.next();
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform on [0,1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform on the open interval (0,1); safe for log() and quantile().
  double uniform_open() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Unbiased integer in [0, bound) by rejection.
  std::uint64_t below(std::uint64_t bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % bound;
    }
  }

  // Exp(1).
  double exponential() { return -std::log(uniform_open()); }

  // Poisson(1) by Knuth's product method.
  int poisson1() {
    static const double kExpNeg1 = std::exp(-1.0);
    int k = 0;
    double prod = 1.0;
    do {
      ++k;
      prod *= uniform();
    } while (prod > kExpNeg1);
    return k - 1;
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t state_[4];
};

}  // namespace ssinfer
