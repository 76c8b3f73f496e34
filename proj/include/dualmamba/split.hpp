#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dualmamba/hsi.hpp"

namespace dualmamba {

/// Training-set size rule: a proportion of each class, or fixed per-class counts.
struct SplitSpec {
  enum class Kind { proportion, counts };
  Kind kind = Kind::proportion;
  double proportion = 0.1;
  std::vector<std::size_t> counts;  // indexed by class - 1

  // "0.1" or "counts:5,143,83".
  static SplitSpec parse(std::string_view text);
  std::string to_string() const;
};

struct SampleSplit {
  std::uint64_t seed = 0;
  std::vector<std::vector<Pixel>> train_by_class;  // index = class - 1
  std::vector<std::vector<Pixel>> test_by_class;

  // Class-major concatenations (class 1 first).
  std::vector<Pixel> train() const;
  std::vector<Pixel> test() const;
};

/// Stratified sampling without replacement. Per class of n labeled pixels the
/// training size is ceil(p*n) (at least 1, at most n-1) or the fixed count;
/// the rest is test. Pixels are drawn from Rng::stream(seed, "split"),
/// independently of any other randomness. Classes with a single labeled pixel
/// go to train only, with a warning.
SampleSplit split_samples(const std::vector<std::uint16_t>& labels, std::size_t width, std::size_t num_classes,
                          const SplitSpec& spec, std::uint64_t seed);

}  // namespace dualmamba
