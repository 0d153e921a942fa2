#include "layerpool/rng.hpp"

#include <random>

namespace layerpool {

std::uint64_t Rng::below(std::uint64_t n) noexcept {
  // Lemire's rejection keeps the result unbiased.
  if (n == 0) return 0;
  const std::uint64_t threshold = (0 - n) % n;
  for (;;) {
    const std::uint64_t x = (*this)();
    const unsigned __int128 m = static_cast<unsigned __int128>(x) * n;
    if (static_cast<std::uint64_t>(m) >= threshold) return static_cast<std::uint64_t>(m >> 64);
  }
}

double Rng::normal(double mean, double stddev) {
  std::normal_distribution<double> dist(mean, stddev);
  return dist(*this);
}

}  // namespace layerpool
