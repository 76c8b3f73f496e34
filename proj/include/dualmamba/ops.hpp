#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dualmamba/tensor.hpp"

// Differentiable tensor primitives.
//
// Feature maps are channels-last: (batch, height, width, channels). Every op
// validates its operand shapes (ShapeError naming the op), rejects non-finite
// outputs (NumericError), and records a backward closure on the active tape
// when any operand requires grad. Ops also report their analytic cost to an
// active trace::CostRecorder.

namespace dualmamba {

// Elementwise binary ops. Operands must have equal rank; each dimension must
// match or be 1 on one side (that side is broadcast).
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

// s * x and x + s for a constant s.
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s);

template <typename T>
Tensor<T> exp(const Tensor<T>& x);
template <typename T>
Tensor<T> silu(const Tensor<T>& x);
template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> softplus(const Tensor<T>& x);

// Full reductions to a rank-0 tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

// Mean over the listed axes, keeping them as extent-1 dimensions.
template <typename T>
Tensor<T> mean_axes(const Tensor<T>& x, const std::vector<std::size_t>& axes);

// (B,H,W,C) -> (B,1,1,C).
template <typename T>
Tensor<T> spatial_mean(const Tensor<T>& x) {
  return mean_axes(x, {1, 2});
}

// (M,K) x (K,N) -> (M,N).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// x (..., in) * weight (in, out) + bias (out). bias may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

// 1x1 convolution over channels-last maps; identical to linear on the channel axis.
template <typename T>
Tensor<T> pointwise_conv(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  return linear(x, weight, bias);
}

// Grouped 2-D convolution, stride 1, "same" zero padding (odd kernels).
// x (B,H,W,Cin), weight (kh,kw,Cin/groups,Cout), bias (Cout) or undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t groups);

// Depthwise 2-D convolution, stride 1, "same" zero padding.
// x (B,H,W,C), weight (kh,kw,C), bias (C) or undefined.
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

// Single-filter 1x1x3 3-D convolution sliding along the channel axis with
// zero padding: y[c] = w0*x[c-1] + w1*x[c] + w2*x[c+1]. weight has 3 entries.
template <typename T>
Tensor<T> band_conv3(const Tensor<T>& x, const Tensor<T>& weight);

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

// Normalizes over the last axis. gamma/beta (last-axis extent) may be undefined.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));

// Batch normalization over every axis but the last (channels). In training
// mode batch statistics are used and the running buffers are updated in
// place; in eval mode the running buffers are used and left untouched.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                     T momentum = T(0.1), T eps = T(1e-5));

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);

template <typename T>
Tensor<T> flip(const Tensor<T>& x, std::size_t axis);

template <typename T>
Tensor<T> narrow(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

// Mean cross-entropy of logits (B,K) against class indices in [0,K), via a
// fused log-softmax.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

// Throws NumericError naming `op` if any value is NaN or infinite.
template <typename T>
void check_finite(const Tensor<T>& x, const char* op);

}  // namespace dualmamba
