#include "dualmamba/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace dualmamba {

namespace {
double evaluate(const ScalarFn& fn, const std::vector<Tensor<double>>& point) {
  const double v = fn(point).item();
  if (!std::isfinite(v)) throw NumericError("gradcheck: non-finite function value");
  return v;
}
}  // namespace

GradcheckResult gradcheck(const ScalarFn& fn, const std::vector<Tensor<double>>& point, double eps) {
  std::vector<bool> previous;
  std::vector<Tensor<double>> args = point;
  for (auto& t : args) {
    for (double v : t.data()) {
      if (!std::isfinite(v)) throw NumericError("gradcheck: non-finite point");
    }
    previous.push_back(t.requires_grad());
    t.zero_grad();
    t.set_requires_grad(true);
  }

  std::vector<std::vector<double>> analytic;
  {
    Tape<double> tape;
    Tensor<double> loss;
    {
      GradScope<double> scope(tape);
      loss = fn(args);
    }
    backward(loss);
    for (auto& t : args) {
      if (t.has_grad()) analytic.emplace_back(t.grad().begin(), t.grad().end());
      else analytic.emplace_back(t.numel(), 0.0);
    }
  }

  // Roundoff in f(x +- h) grows with |f|, so the floor does too.
  const double floor = kGradcheckFloor * std::max(1.0, std::abs(evaluate(fn, args)));
  GradcheckResult result;
  bool first = true;
  for (std::size_t k = 0; k < args.size(); ++k) {
    auto values = args[k].data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      auto at = [&](double offset) {
        values[i] = saved + offset;
        return evaluate(fn, args);
      };
      const double d1 = at(eps) - at(-eps);
      const double d2 = at(2.0 * eps) - at(-2.0 * eps);
      values[i] = saved;
      const double numeric = (8.0 * d1 - d2) / (12.0 * eps);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      const double err = std::abs(a - numeric) / denom;
      if (first || err > result.max_relative_error) {
        result = {err, k, i, a, numeric};
        first = false;
      }
    }
  }
  for (std::size_t k = 0; k < args.size(); ++k) args[k].set_requires_grad(previous[k]);
  return result;
}

}  // namespace dualmamba
