#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "dualmamba/tensor.hpp"

namespace dualmamba {

struct GradcheckResult {
  double max_relative_error = 0.0;
  // Location of the worst coordinate.
  std::size_t input = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

using ScalarFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

/// Compares reverse-mode gradients of a scalar function against five-point
/// central differences, perturbing every coordinate of every tensor in
/// `point`. The fourth-order stencil keeps truncation error negligible on
/// strongly curved losses such as train-mode batch norm over a few samples.
///
/// The tensors are perturbed in place, so parameters owned by a module can
/// be checked by passing their handles. Per-coordinate error is
/// |analytic - numeric| / max(|analytic|, |numeric|, kGradcheckFloor * max(1, |f(x)|)).
/// The floor keeps gradients that are exactly zero (e.g. a bias feeding a
/// batch norm) from being judged on finite-difference roundoff alone.
inline constexpr double kGradcheckFloor = 1e-6;

GradcheckResult gradcheck(const ScalarFn& fn, const std::vector<Tensor<double>>& point, double eps = 1e-5);

}  // namespace dualmamba
