#pragma once

// SplitMix64: a tiny splittable PRNG. Per-device streams are derived from
// (seed, stream index) through the output mixer, so sampling is reproducible
// independent of thread count or evaluation order.

#include <cstdint>

namespace lsmdp {

class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double next_double() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Output mixer as a standalone hash.
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Decorrelated stream keyed by (seed, stream_index).
  static SplitMix64 stream(std::uint64_t seed, std::uint64_t stream_index) {
    return SplitMix64(mix(mix(seed) + (stream_index + 1) * 0xD1B54A32D192ED03ULL));
  }

 private:
  std::uint64_t state_;
};

}  // namespace lsmdp
