#include "dualmamba/layers.hpp"

namespace dualmamba {

std::string join_name(std::string_view prefix, std::string_view leaf) {
  if (prefix.empty()) return std::string(leaf);
  std::string s(prefix);
  s += '.';
  s += leaf;
  return s;
}

template <typename T>
Tensor<T> truncated_normal(Shape shape, Rng& rng, double stddev) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.truncated_normal(stddev));
  return t;
}

template <typename T>
Linear<T>::Linear(std::size_t in, std::size_t out, bool with_bias, Rng& rng)
    : weight(truncated_normal<T>({in, out}, rng)) {
  if (with_bias) bias = Tensor<T>(Shape{out});
}

template <typename T>
void Linear<T>::visit(std::string_view prefix, const ParamVisitor<T>& fn) {
  fn(join_name(prefix, "weight"), weight, ParamKind::weight);
  if (bias.defined()) fn(join_name(prefix, "bias"), bias, ParamKind::weight);
}

template <typename T>
LayerNorm<T>::LayerNorm(std::size_t width, bool affine) {
  if (affine) {
    gamma = Tensor<T>(Shape{width}, T(1));
    beta = Tensor<T>(Shape{width});
  }
}

template <typename T>
void LayerNorm<T>::visit(std::string_view prefix, const ParamVisitor<T>& fn) {
  if (gamma.defined()) fn(join_name(prefix, "gamma"), gamma, ParamKind::weight);
  if (beta.defined()) fn(join_name(prefix, "beta"), beta, ParamKind::weight);
}

template <typename T>
BatchNorm<T>::BatchNorm(std::size_t channels)
    : gamma(Shape{channels}, T(1)),
      beta(Shape{channels}),
      running_mean(Shape{channels}),
      running_var(Shape{channels}, T(1)) {}

template <typename T>
Tensor<T> BatchNorm<T>::forward(const Tensor<T>& x, Mode mode) {
  return batch_norm(x, gamma, beta, running_mean, running_var, mode == Mode::train, T(0.1), T(1e-5));
}

template <typename T>
void BatchNorm<T>::visit(std::string_view prefix, const ParamVisitor<T>& fn) {
  fn(join_name(prefix, "gamma"), gamma, ParamKind::weight);
  fn(join_name(prefix, "beta"), beta, ParamKind::weight);
  fn(join_name(prefix, "running_mean"), running_mean, ParamKind::buffer);
  fn(join_name(prefix, "running_var"), running_var, ParamKind::buffer);
}

template <typename T>
DepthwiseConv<T>::DepthwiseConv(std::size_t channels, bool with_bias, Rng& rng)
    : weight(truncated_normal<T>({3, 3, channels}, rng)) {
  if (with_bias) bias = Tensor<T>(Shape{channels});
}

template <typename T>
void DepthwiseConv<T>::visit(std::string_view prefix, const ParamVisitor<T>& fn) {
  fn(join_name(prefix, "weight"), weight, ParamKind::weight);
  if (bias.defined()) fn(join_name(prefix, "bias"), bias, ParamKind::weight);
}

template <typename T>
GroupConv<T>::GroupConv(std::size_t in, std::size_t out, std::size_t groups_, Rng& rng)
    : weight(truncated_normal<T>({3, 3, in / groups_, out}, rng)), bias(Shape{out}), groups(groups_) {}

template <typename T>
void GroupConv<T>::visit(std::string_view prefix, const ParamVisitor<T>& fn) {
  fn(join_name(prefix, "weight"), weight, ParamKind::weight);
  fn(join_name(prefix, "bias"), bias, ParamKind::weight);
}

template <typename T>
BandConv<T>::BandConv(Rng& rng) : weight(truncated_normal<T>({3}, rng)) {}

template <typename T>
void BandConv<T>::visit(std::string_view prefix, const ParamVisitor<T>& fn) {
  fn(join_name(prefix, "weight"), weight, ParamKind::weight);
}

template Tensor<float> truncated_normal<float>(Shape, Rng&, double);
template Tensor<double> truncated_normal<double>(Shape, Rng&, double);
template struct Linear<float>;
template struct Linear<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;
template struct BatchNorm<float>;
template struct BatchNorm<double>;
template struct DepthwiseConv<float>;
template struct DepthwiseConv<double>;
template struct GroupConv<float>;
template struct GroupConv<double>;
template struct BandConv<float>;
template struct BandConv<double>;

}  // namespace dualmamba
