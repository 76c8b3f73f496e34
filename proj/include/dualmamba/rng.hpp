#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace dualmamba {

/// Seeded random source.
///
/// Independent streams (split sampling, parameter init, batch shuffling...)
/// derive from one root seed: stream(root, tag) seeds a fresh engine from
/// std::seed_seq{root_lo, root_hi, fnv1a(tag)}. Streams with different tags
/// are decorrelated and adding a new stream never perturbs existing ones.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  static Rng stream(std::uint64_t root_seed, std::string_view tag);

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal(double mean, double stddev) { return std::normal_distribution<double>(mean, stddev)(engine_); }

  // Normal(0, stddev) redrawn until within [-2 stddev, 2 stddev].
  double truncated_normal(double stddev);

  std::uint64_t next_u64() { return engine_(); }

  template <typename It>
  void shuffle(It first, It last) {
    std::shuffle(first, last, engine_);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace dualmamba
