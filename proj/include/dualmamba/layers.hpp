#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>

#include "dualmamba/ops.hpp"
#include "dualmamba/rng.hpp"

namespace dualmamba {

enum class Mode { train, eval };

enum class ParamKind {
  weight,  // learned; counted and optimized
  buffer,  // persistent state such as batch-norm running statistics
};

template <typename T>
using ParamVisitor = std::function<void(const std::string& name, Tensor<T>& tensor, ParamKind kind)>;

std::string join_name(std::string_view prefix, std::string_view leaf);

template <typename T>
Tensor<T> truncated_normal(Shape shape, Rng& rng, double stddev = 0.02);

template <typename T>
struct Linear {
  Tensor<T> weight;  // (in, out)
  Tensor<T> bias;    // (out), undefined when built without bias

  Linear() = default;
  Linear(std::size_t in, std::size_t out, bool with_bias, Rng& rng);
  Tensor<T> forward(const Tensor<T>& x) const { return linear(x, weight, bias); }
  void visit(std::string_view prefix, const ParamVisitor<T>& fn);
};

template <typename T>
struct LayerNorm {
  Tensor<T> gamma;  // undefined when affine-free
  Tensor<T> beta;

  LayerNorm() = default;
  LayerNorm(std::size_t width, bool affine);
  Tensor<T> forward(const Tensor<T>& x) const { return layer_norm(x, gamma, beta, T(1e-5)); }
  void visit(std::string_view prefix, const ParamVisitor<T>& fn);
};

// Affine batch normalization over the channel (last) axis; momentum 0.1, eps 1e-5.
template <typename T>
struct BatchNorm {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;

  BatchNorm() = default;
  explicit BatchNorm(std::size_t channels);
  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  void visit(std::string_view prefix, const ParamVisitor<T>& fn);
};

// 3x3 depthwise convolution with optional bias.
template <typename T>
struct DepthwiseConv {
  Tensor<T> weight;  // (3,3,C)
  Tensor<T> bias;

  DepthwiseConv() = default;
  DepthwiseConv(std::size_t channels, bool with_bias, Rng& rng);
  Tensor<T> forward(const Tensor<T>& x) const { return depthwise_conv2d(x, weight, bias); }
  void visit(std::string_view prefix, const ParamVisitor<T>& fn);
};

// 3x3 grouped convolution with bias.
template <typename T>
struct GroupConv {
  Tensor<T> weight;  // (3,3,Cin/groups,Cout)
  Tensor<T> bias;
  std::size_t groups = 1;

  GroupConv() = default;
  GroupConv(std::size_t in, std::size_t out, std::size_t groups, Rng& rng);
  Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, weight, bias, groups); }
  void visit(std::string_view prefix, const ParamVisitor<T>& fn);
};

// Single 1x1x3 spectral kernel: three weights, no bias.
template <typename T>
struct BandConv {
  Tensor<T> weight;  // (3)

  BandConv() = default;
  explicit BandConv(Rng& rng);
  Tensor<T> forward(const Tensor<T>& x) const { return band_conv3(x, weight); }
  void visit(std::string_view prefix, const ParamVisitor<T>& fn);
};

}  // namespace dualmamba
