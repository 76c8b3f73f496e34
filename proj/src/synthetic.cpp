#include "dualmamba/synthetic.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "dualmamba/error.hpp"
#include "dualmamba/rng.hpp"

namespace dualmamba {

std::vector<double> class_signature(std::size_t k, std::size_t bands) {
  std::vector<double> s(bands);
  for (std::size_t b = 0; b < bands; ++b) {
    const double t = (static_cast<double>(b) + 0.5) / static_cast<double>(bands);
    s[b] = 0.5 + 0.3 * std::sin(std::numbers::pi * static_cast<double>(k) * t + 0.7 * static_cast<double>(k));
  }
  return s;
}

HsiCube generate_synthetic(const SyntheticSpec& spec) {
  if (spec.height == 0 || spec.width == 0 || spec.bands == 0 || spec.classes < 2) {
    throw ConfigError("synthetic: need positive dimensions and at least 2 classes");
  }
  const std::size_t cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(spec.classes))));
  const std::size_t rows = (spec.classes + cols - 1) / cols;

  HsiCube cube;
  cube.height = spec.height;
  cube.width = spec.width;
  cube.bands = spec.bands;
  for (std::size_t k = 1; k <= spec.classes; ++k) cube.class_names.push_back("class_" + std::to_string(k));

  std::vector<std::vector<double>> signatures;
  for (std::size_t k = 1; k <= spec.classes + 1; ++k) signatures.push_back(class_signature(k, spec.bands));

  // True when pixel index i lies within gutter/2 of an internal cell edge.
  auto in_gutter = [&](std::size_t i, std::size_t extent, std::size_t cells) {
    const double centre = static_cast<double>(i) + 0.5;
    for (std::size_t j = 1; j < cells; ++j) {
      const double edge = static_cast<double>(j * extent) / static_cast<double>(cells);
      if (std::abs(centre - edge) < 0.5 * static_cast<double>(spec.gutter)) return true;
    }
    return false;
  };

  Rng rng = Rng::stream(spec.seed, "synthetic");
  cube.labels.resize(spec.height * spec.width);
  cube.values.resize(spec.height * spec.width * spec.bands);
  for (std::size_t r = 0; r < spec.height; ++r) {
    for (std::size_t c = 0; c < spec.width; ++c) {
      const std::size_t cell = (r * rows / spec.height) * cols + (c * cols / spec.width);
      const bool background = in_gutter(r, spec.height, rows) || in_gutter(c, spec.width, cols);
      const auto label = background ? std::uint16_t{0} : static_cast<std::uint16_t>(cell % spec.classes + 1);
      const auto& signature = signatures[background ? spec.classes : label - 1u];
      cube.labels[r * spec.width + c] = label;
      for (std::size_t b = 0; b < spec.bands; ++b) {
        cube.values[(r * spec.width + c) * spec.bands + b] =
            static_cast<float>(signature[b] + rng.normal(0.0, spec.noise));
      }
    }
  }
  return cube;
}

double nearest_signature_error(const HsiCube& cube) {
  std::vector<std::vector<double>> signatures;
  for (std::size_t k = 1; k <= cube.num_classes(); ++k) signatures.push_back(class_signature(k, cube.bands));
  std::size_t wrong = 0, labeled = 0;
  for (std::size_t p = 0; p < cube.labels.size(); ++p) {
    if (cube.labels[p] == 0) continue;
    ++labeled;
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t k = 0; k < signatures.size(); ++k) {
      double d = 0.0;
      for (std::size_t b = 0; b < cube.bands; ++b) {
        const double e = cube.values[p * cube.bands + b] - signatures[k][b];
        d += e * e;
      }
      if (d < best) best = d, arg = k;
    }
    if (arg + 1 != cube.labels[p]) ++wrong;
  }
  return labeled == 0 ? 0.0 : static_cast<double>(wrong) / static_cast<double>(labeled);
}

}  // namespace dualmamba
