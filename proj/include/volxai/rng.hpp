#pragma once

// Portable seeded randomness.
//
// std::mt19937_64 produces the same raw sequence on every conforming
// implementation, but the standard distributions do not, so all value
// transforms here are implemented directly on the raw 64-bit output.
//
// Seed derivation: derive_seed(parent, tag) = splitmix64_mix(parent + (tag + 1) * 0x9E3779B97F4A7C15).
// A dataset uses derive_seed(master, case_counter) per case and
// derive_seed(case_seed, stream_tag) per field (layout, CT noise, PET noise).

#include <cstdint>
#include <random>

namespace volxai::rng {

std::uint64_t splitmix64_mix(std::uint64_t z) noexcept;
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t tag) noexcept;

/// Named per-field streams inside a case.
enum class StreamTag : std::uint64_t {
  Layout = 1,
  CtNoise = 2,
  PetNoise = 3,
  Init = 10,
  Sampling = 11,
  Augment = 12,
  Negatives = 13,
};

inline std::uint64_t derive_seed(std::uint64_t parent, StreamTag tag) noexcept {
  return derive_seed(parent, static_cast<std::uint64_t>(tag));
}

class Stream {
 public:
  explicit Stream(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t bits() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [lo, hi] (inclusive), unbiased.
  long long uniform_int(long long lo, long long hi);
  /// Standard normal, Box-Muller.
  double normal();
  double normal(double mean, double sigma) { return mean + sigma * normal(); }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace volxai::rng
