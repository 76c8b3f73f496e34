#pragma once

#include <cstddef>
#include <string_view>

#include "dualmamba/layers.hpp"

namespace dualmamba {

/// Lightweight spectral-spatial convolution stream on (B,P,P,D) features.
///
///   L_spe = SiLU(BN(band_conv3(X)))         3 weights, slides along channels
///   L_spa = SiLU(BN(depthwise3x3(X)))       no bias
///   L     = SiLU(BN(pointwise([L_spe, L_spa])))   2D -> D with bias
template <typename T>
struct SpectralSpatialConv {
  BandConv<T> band;
  BatchNorm<T> band_norm;
  DepthwiseConv<T> depthwise;
  BatchNorm<T> depthwise_norm;
  Linear<T> pointwise;
  BatchNorm<T> pointwise_norm;

  SpectralSpatialConv() = default;
  SpectralSpatialConv(std::size_t dim, Rng& rng);

  Tensor<T> spectral_branch(const Tensor<T>& x, Mode mode);
  Tensor<T> spatial_branch(const Tensor<T>& x, Mode mode);
  Tensor<T> fuse(const Tensor<T>& l_spe, const Tensor<T>& l_spa, Mode mode);
  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    return fuse(spectral_branch(x, mode), spatial_branch(x, mode), mode);
  }
  void visit(std::string_view prefix, const ParamVisitor<T>& fn);
};

}  // namespace dualmamba
