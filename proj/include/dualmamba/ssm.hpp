#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <utility>

#include "dualmamba/layers.hpp"

// Selective state-space (S6) machinery.
//
// Continuous dynamics h' = A h + B x, y = C h with diagonal A (per channel d,
// state n) are discretized per token with timestep delta:
//   a_bar = exp(delta * a)
//   b_bar = (exp(delta * a) - 1) / a * b        (zero-order hold)
// and scanned as h_t = a_bar_t * h_{t-1} + b_bar_t * x_t, y_t = <C_t, h_t>.

namespace dualmamba {

// Multiply-accumulates per (token, channel, state) of one scan step:
// 2 for discretization, 2 for the recurrence, 1 for the readout.
inline constexpr std::uint64_t kScanMacsPerState = 5;

enum class Discretization {
  zoh,    // exact zero-order hold for b_bar
  euler,  // b_bar ~= delta * b
};

struct ScanOptions {
  Discretization discretization = Discretization::zoh;
};

template <typename T>
struct DiscreteStep {
  T a_bar;
  T b_bar;
};

// Scalar discretization. For |delta*a| < 1e-4 the ZOH input coupling falls
// back to delta*b*(1 + delta*a/2 + (delta*a)^2/6).
template <typename T>
DiscreteStep<T> zoh_discretize(T a, T delta, T b);

// A (D,N), B (L,N), delta (L,D) -> {a_bar, b_bar}, each (L,D,N). Not differentiable.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> zoh_discretize(const Tensor<T>& A, const Tensor<T>& B, const Tensor<T>& delta);

/// Fused selective scan over a batch of sequences (zero initial state).
///
/// x, delta: (batch, L, D); A: (D, N) strictly negative; B, C: (batch, L, N);
/// skip: (D) feedthrough y += skip*x, or undefined for none.
/// Returns y (batch, L, D). Differentiable in every operand.
template <typename T>
Tensor<T> selective_scan(const Tensor<T>& x, const Tensor<T>& delta, const Tensor<T>& A, const Tensor<T>& B,
                         const Tensor<T>& C, const Tensor<T>& skip, ScanOptions options = {});

/// Convolutional form of a time-invariant SSM, used as an oracle for the scan.
///
/// Builds K[d][k] = sum_n C[n] a_bar[d,n]^k b_bar[d,n] and returns the causal
/// convolution y[t,d] = sum_k K[d][k] x[t-k,d]. Inputs are a_bar, b_bar
/// (L,D,N), C (L,N), x (L,D); every time slice of a_bar, b_bar and C must be
/// identical, otherwise NumericError.
template <typename T>
Tensor<T> ssm_conv_oracle(const Tensor<T>& a_bar, const Tensor<T>& b_bar, const Tensor<T>& C, const Tensor<T>& x);

enum class ScanOrder { spatial_row_major, spectral_forward, spectral_reversed };

std::string_view to_string(ScanOrder order);

template <typename T>
struct ScanSequence {
  Tensor<T> tokens;  // (batch, L, D_inner)
  ScanOrder order = ScanOrder::spatial_row_major;

  std::size_t length() const { return tokens.dim(1); }
  std::size_t width() const { return tokens.dim(2); }
};

struct SsmConfig {
  std::size_t d_inner = 0;
  std::size_t d_state = 16;
  std::size_t dt_rank = 0;  // 0 selects max(1, ceil(d_inner / 16))
  bool d_skip = false;
  Discretization discretization = Discretization::zoh;
};

std::size_t auto_dt_rank(std::size_t d_inner);

/// Learned S6 parameters plus the input-dependent projections.
///
/// B, C and delta are produced per token: [dt_low | B | C] = x * x_proj,
/// delta = softplus(dt_low * dt_proj + dt_bias). A = -exp(a_log) is static.
template <typename T>
class SelectiveSsm {
 public:
  struct Projection {
    Tensor<T> B;      // (batch, L, N)
    Tensor<T> C;      // (batch, L, N)
    Tensor<T> delta;  // (batch, L, D_inner)
  };

  SelectiveSsm() = default;
  SelectiveSsm(const SsmConfig& config, Rng& rng);

  const SsmConfig& config() const { return config_; }
  std::size_t dt_rank() const { return dt_rank_; }

  // -exp(a_log), (D_inner, N).
  Tensor<T> A() const;

  Projection project(const ScanSequence<T>& seq) const;
  Tensor<T> forward(const ScanSequence<T>& seq) const;

  void visit(std::string_view prefix, const ParamVisitor<T>& fn);

  Tensor<T> a_log;    // (D_inner, N)
  Tensor<T> x_proj;   // (D_inner, dt_rank + 2N)
  Tensor<T> dt_proj;  // (dt_rank, D_inner)
  Tensor<T> dt_bias;  // (D_inner)
  Tensor<T> skip;     // (D_inner), only with d_skip

 private:
  SsmConfig config_;
  std::size_t dt_rank_ = 1;
};

}  // namespace dualmamba
