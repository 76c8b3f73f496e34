#include "dualmamba/rng.hpp"

#include <cmath>

namespace dualmamba {

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

Rng Rng::stream(std::uint64_t root_seed, std::string_view tag) {
  const std::uint64_t t = fnv1a64(tag);
  std::seed_seq seq{static_cast<std::uint32_t>(root_seed), static_cast<std::uint32_t>(root_seed >> 32),
                    static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(t >> 32)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return Rng((static_cast<std::uint64_t>(words[1]) << 32) | words[0]);
}

double Rng::truncated_normal(double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (;;) {
    const double v = dist(engine_);
    if (std::abs(v) <= 2.0 * stddev) return v;
  }
}

}  // namespace dualmamba
