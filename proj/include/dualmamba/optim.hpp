#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dualmamba/tensor.hpp"

namespace dualmamba {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// AdamW with decoupled weight decay:
///   p <- p - lr*wd*p
///   m <- b1*m + (1-b1)*g,  v <- b2*v + (1-b2)*g^2
///   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<Tensor<T>> params, AdamWConfig config);

  // Applies one update; every parameter must hold a gradient (AutodiffError otherwise).
  void step();
  void zero_grad();

  double lr() const { return config_.lr; }
  void set_lr(double lr) { config_.lr = lr; }
  const AdamWConfig& config() const { return config_; }

  std::int64_t step_count() const { return step_; }
  void set_step_count(std::int64_t t) { step_ = t; }
  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }
  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }
  const std::vector<Tensor<T>>& params() const { return params_; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
  AdamWConfig config_;
  std::int64_t step_ = 0;
};

// StepLR: lr after epoch e (1-based) is lr0 * gamma^floor((e-1)/step_size).
double step_lr(double lr0, double gamma, int step_size, int epoch);

}  // namespace dualmamba
