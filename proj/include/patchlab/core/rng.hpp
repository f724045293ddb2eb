#pragma once

#include <cmath>
#include <cstdint>

namespace patchlab {

// SplitMix64 finalizer (Steele, Lea & Flood). Bijective on 64-bit words.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Counter-based generator. The value drawn at (key, stream, counter) is
//
//   mix(mix(mix(key) ^ stream) ^ counter)
//
// with mix = splitmix64. Nothing is carried between draws except the counter,
// so any draw can be reproduced from its three coordinates alone. Generation
// uses key = item seed (base_seed + item index) and counter = decode step.
class counter_rng {
 public:
  constexpr explicit counter_rng(std::uint64_t key, std::uint64_t stream = 0) noexcept
      : key_(key), stream_(stream) {}

  static constexpr std::uint64_t at(std::uint64_t key, std::uint64_t stream,
                                    std::uint64_t counter) noexcept {
    return splitmix64(splitmix64(splitmix64(key) ^ stream) ^ counter);
  }

  constexpr std::uint64_t next_u64() noexcept { return at(key_, stream_, counter_++); }

  // Uniform in [0, 1) with 53 random bits.
  double next_double() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; consumes two draws.
  double next_normal() noexcept {
    double u1 = next_double();
    double u2 = next_double();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925 * u2);
  }

  // Uniform integer in [0, n) by rejection; n must be > 0.
  std::uint64_t next_below(std::uint64_t n) noexcept {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return v % n;
  }

  constexpr std::uint64_t counter() const noexcept { return counter_; }
  constexpr std::uint64_t key() const noexcept { return key_; }
  constexpr std::uint64_t stream() const noexcept { return stream_; }

 private:
  std::uint64_t key_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
};

}  // namespace patchlab
