#pragma once

#include <cstdint>
#include <limits>

namespace layerpool {

/// SplitMix64 generator. Satisfies UniformRandomBitGenerator so it plugs into
/// <random> distributions. `split` derives an independent child stream from
/// the current state and a stream label without advancing the parent.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0x853c49e6748fea9bULL) noexcept : state_(seed) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix(state_);
  }

  Rng split(std::uint64_t stream) const noexcept {
    return Rng(mix(state_ ^ mix(stream + 0x632be59bd9b4e019ULL)));
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept;

  double normal(double mean, double stddev);

  std::uint64_t state() const noexcept { return state_; }

  static std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

}  // namespace layerpool
