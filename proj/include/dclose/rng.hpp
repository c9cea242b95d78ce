#pragma once

// Counter-based random numbers. Every stream is addressed by a key derived
// from (master seed, level, mask index), so any single mask can be rebuilt
// without replaying the ones before it.

#include <cstdint>
#include <initializer_list>

namespace dclose {

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t hash_combine(std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t h = 0x243f6a8885a308d3ULL;
  for (std::uint64_t p : parts) h = mix64(h ^ mix64(p));
  return h;
}

// SplitMix64 in counter mode: value(i) = mix64(key + i * gamma).
class CounterRng {
 public:
  explicit constexpr CounterRng(std::uint64_t key) noexcept : key_(key) {}

  constexpr std::uint64_t at(std::uint64_t counter) const noexcept {
    return mix64(key_ + counter * 0x9e3779b97f4a7c15ULL);
  }
  constexpr std::uint64_t next() noexcept { return at(counter_++); }

  // Uniform double in [0,1) with 53 random bits.
  constexpr double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  constexpr bool bernoulli(double p) noexcept {
    if (p >= 1.0) return true;
    if (p <= 0.0) return false;
    return uniform() < p;
  }

  // Uniform integer in [0, bound] by rejection (no modulo bias).
  constexpr std::uint64_t uniform_int(std::uint64_t bound) noexcept {
    if (bound == 0) return 0;
    if (bound == ~0ULL) return next();
    const std::uint64_t range = bound + 1;
    const std::uint64_t limit = ~0ULL - (~0ULL % range);
    for (;;) {
      const std::uint64_t x = next();
      if (x < limit) return x % range;
    }
  }

  constexpr std::uint64_t key() const noexcept { return key_; }
  constexpr std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

inline CounterRng mask_rng(std::uint64_t master_seed, std::uint64_t level, std::uint64_t mask_index) noexcept {
  return CounterRng(hash_combine({master_seed, level, mask_index}));
}

}  // namespace dclose
