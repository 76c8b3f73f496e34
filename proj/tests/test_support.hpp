#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "dualmamba/gradcheck.hpp"
#include "dualmamba/ops.hpp"
#include "dualmamba/rng.hpp"

namespace dmtest {

using dualmamba::Rng;
using dualmamba::Shape;
using dualmamba::Tensor;
using Args = std::vector<Tensor<double>>;

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

inline Tensor<float> random_tensor_f(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<float> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

// Worst relative error of d/d(args) sum(w * f(args)) for a fixed random
// weighting w, so every output coordinate contributes a distinct gradient.
inline double grad_error(const std::function<Tensor<double>(const Args&)>& f, const Args& point,
                         std::uint64_t seed = 99) {
  Tensor<double> w;
  auto loss = [&](const Args& a) {
    Tensor<double> y = f(a);
    if (!w.defined()) {
      Rng rng(seed);
      w = random_tensor(y.shape(), rng, 0.5, 1.5);
    }
    return dualmamba::sum(dualmamba::mul(y, w));
  };
  return dualmamba::gradcheck(loss, point).max_relative_error;
}

}  // namespace dmtest
