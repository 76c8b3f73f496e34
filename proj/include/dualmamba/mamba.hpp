#pragma once

#include <cstddef>
#include <string_view>

#include "dualmamba/layers.hpp"
#include "dualmamba/ssm.hpp"

// Dual-stream Mamba path. All feature maps are batched, channels-last:
// patch features (B,P,P,D), spectral features (B,1,1,D).

namespace dualmamba {

// Row-major flattening (B,P,P,C) -> tokens (B,P*P,C) and its inverse.
template <typename T>
ScanSequence<T> spatial_scan(const Tensor<T>& x);
template <typename T>
Tensor<T> spatial_unflatten(const ScanSequence<T>& seq, std::size_t patch);

// Y0 + flip(Y1) along the token axis.
template <typename T>
Tensor<T> merge_bidirectional(const Tensor<T>& y0, const Tensor<T>& y1);

// Center pixel (B,1,1,D) of an odd-sided patch; ShapeError for even sides.
template <typename T>
Tensor<T> center_pixel(const Tensor<T>& x);

/// Dynamic positional embedding: 3x3 depthwise conv with bias.
/// The caller adds it back: X_pos = X + dpe(X).
template <typename T>
struct PositionalEmbedding {
  DepthwiseConv<T> conv;

  PositionalEmbedding() = default;
  PositionalEmbedding(std::size_t channels, Rng& rng) : conv(channels, true, rng) {}
  Tensor<T> forward(const Tensor<T>& x) const { return conv.forward(x); }
  void visit(std::string_view prefix, const ParamVisitor<T>& fn) { conv.visit(prefix, fn); }
};

/// LN -> Linear(D, ratio*D) -> row-major S6 scan -> LN -> Linear(ratio*D, D) -> + X_pos.
template <typename T>
struct SpatialMambaBlock {
  LayerNorm<T> norm_in;
  Linear<T> proj_in;
  SelectiveSsm<T> ssm;
  LayerNorm<T> norm_out;
  Linear<T> proj_out;

  SpatialMambaBlock() = default;
  SpatialMambaBlock(std::size_t dim, std::size_t ssm_ratio, const SsmConfig& ssm_config, Rng& rng);

  // Output before the residual add.
  Tensor<T> branch(const Tensor<T>& x_pos) const;
  Tensor<T> forward(const Tensor<T>& x_pos) const { return add(x_pos, branch(x_pos)); }
  void visit(std::string_view prefix, const ParamVisitor<T>& fn);
};

/// Treats the center pixel's D channels as a length-D sequence of width
/// ratio and scans it forward and (when bidirectional) reversed with two
/// independent S6 models. Returns (B,1,1,D).
template <typename T>
struct SpectralMambaBlock {
  LayerNorm<T> norm_in;
  Linear<T> proj_in;  // (1, ratio), shared across tokens
  SelectiveSsm<T> ssm_forward;
  SelectiveSsm<T> ssm_backward;  // unused when unidirectional
  LayerNorm<T> norm_out;
  Linear<T> proj_out;  // (ratio, 1)
  bool bidirectional = true;

  SpectralMambaBlock() = default;
  SpectralMambaBlock(std::size_t dim, std::size_t ssm_ratio, bool bidirectional, const SsmConfig& ssm_config,
                     Rng& rng);

  Tensor<T> branch(const Tensor<T>& x_pos) const;
  Tensor<T> forward(const Tensor<T>& x_pos) const { return add(center_pixel(x_pos), branch(x_pos)); }
  void visit(std::string_view prefix, const ParamVisitor<T>& fn);
};

/// Channel attention exchange between the two streams:
///   A_spe = softmax_D(Norm(G_spe)), A_spa = softmax_D(avgpool(Norm(G_spa)))
///   G = A_spe * G_spa + A_spa * G_spe + X_pos
/// Norm is a layer norm over channels, affine-free unless requested.
template <typename T>
struct CrossAttentionFusion {
  struct Result {
    Tensor<T> fused;     // (B,P,P,D)
    Tensor<T> attn_spe;  // (B,1,1,D)
    Tensor<T> attn_spa;  // (B,1,1,D)
  };

  LayerNorm<T> norm_spe;
  LayerNorm<T> norm_spa;

  CrossAttentionFusion() = default;
  CrossAttentionFusion(std::size_t dim, bool norm_affine) : norm_spe(dim, norm_affine), norm_spa(dim, norm_affine) {}

  Result forward(const Tensor<T>& g_spe, const Tensor<T>& g_spa, const Tensor<T>& x_pos) const;
  void visit(std::string_view prefix, const ParamVisitor<T>& fn);
};

}  // namespace dualmamba
