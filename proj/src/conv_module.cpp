#include "dualmamba/conv_module.hpp"

#include "op_support.hpp"

namespace dualmamba {

template <typename T>
SpectralSpatialConv<T>::SpectralSpatialConv(std::size_t dim, Rng& rng)
    : band(rng),
      band_norm(dim),
      depthwise(dim, false, rng),
      depthwise_norm(dim),
      pointwise(2 * dim, dim, true, rng),
      pointwise_norm(dim) {}

template <typename T>
Tensor<T> SpectralSpatialConv<T>::spectral_branch(const Tensor<T>& x, Mode mode) {
  return silu(band_norm.forward(band.forward(x), mode));
}

template <typename T>
Tensor<T> SpectralSpatialConv<T>::spatial_branch(const Tensor<T>& x, Mode mode) {
  return silu(depthwise_norm.forward(depthwise.forward(x), mode));
}

template <typename T>
Tensor<T> SpectralSpatialConv<T>::fuse(const Tensor<T>& l_spe, const Tensor<T>& l_spa, Mode mode) {
  detail::require(l_spe.shape() == l_spa.shape(), "pointwise_fuse",
                  "branch shapes differ: " + shape_string(l_spe.shape()) + " vs " + shape_string(l_spa.shape()));
  const Tensor<T> cat = concat<T>({l_spe, l_spa}, l_spe.rank() - 1);
  return silu(pointwise_norm.forward(pointwise_conv(cat, pointwise.weight, pointwise.bias), mode));
}

template <typename T>
void SpectralSpatialConv<T>::visit(std::string_view prefix, const ParamVisitor<T>& fn) {
  band.visit(join_name(prefix, "band_conv"), fn);
  band_norm.visit(join_name(prefix, "band_norm"), fn);
  depthwise.visit(join_name(prefix, "depthwise"), fn);
  depthwise_norm.visit(join_name(prefix, "depthwise_norm"), fn);
  pointwise.visit(join_name(prefix, "pointwise"), fn);
  pointwise_norm.visit(join_name(prefix, "pointwise_norm"), fn);
}

template struct SpectralSpatialConv<float>;
template struct SpectralSpatialConv<double>;

}  // namespace dualmamba
