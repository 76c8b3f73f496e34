#include "dualmamba/optim.hpp"

#include <cmath>

namespace dualmamba {

template <typename T>
AdamW<T>::AdamW(std::vector<Tensor<T>> params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {
  if (!(config_.lr > 0)) throw ConfigError("AdamW: learning rate must be positive");
  for (const auto& p : params_) {
    m_.emplace_back(p.shape());
    v_.emplace_back(p.shape());
  }
}

template <typename T>
void AdamW<T>::step() {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    if (!params_[k].has_grad()) {
      throw AutodiffError("AdamW: parameter " + std::to_string(k) + " of shape " +
                          shape_string(params_[k].shape()) + " has no gradient");
    }
  }
  ++step_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  const double decay = 1.0 - config_.lr * config_.weight_decay;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto p = params_[k].data();
    auto g = params_[k].grad();
    auto m = m_[k].data();
    auto v = v_[k].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = config_.lr * (mi / c1) / (std::sqrt(vi / c2) + config_.eps);
      p[i] = static_cast<T>(static_cast<double>(p[i]) * decay - update);
    }
  }
}

template <typename T>
void AdamW<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double step_lr(double lr0, double gamma, int step_size, int epoch) {
  if (step_size < 1 || epoch < 1) throw ConfigError("step_lr: step size and epoch must be >= 1");
  return lr0 * std::pow(gamma, (epoch - 1) / step_size);
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace dualmamba
