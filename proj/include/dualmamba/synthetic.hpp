#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "dualmamba/hsi.hpp"

namespace dualmamba {

struct SyntheticSpec {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t bands = 16;
  std::size_t classes = 4;
  double noise = 0.08;  // per-band Gaussian sigma
  // Width of the unlabeled background strip between neighboring class
  // blocks. With gutter >= patch / 2 no patch mixes two classes.
  std::size_t gutter = 3;
  std::uint64_t seed = 7;
};

// Class k (1-based) reflectance at band b: 0.5 + 0.3 sin(pi k (b + 0.5) / B + 0.7 k).
std::vector<double> class_signature(std::size_t k, std::size_t bands);

/// Labeled cube whose classes tile the image as a grid of rectangular blocks
/// (quadrants for 4 classes), separated by unlabeled background strips that
/// carry their own signature (index classes + 1). Each spectrum is its
/// signature plus i.i.d. Gaussian noise.
HsiCube generate_synthetic(const SyntheticSpec& spec);

// Fraction of labeled pixels whose nearest class signature (Euclidean) is not
// their label. With equal priors and isotropic noise this is the Bayes rule,
// so the result estimates the generator's Bayes error.
double nearest_signature_error(const HsiCube& cube);

}  // namespace dualmamba
