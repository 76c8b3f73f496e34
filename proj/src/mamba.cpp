#include "dualmamba/mamba.hpp"

#include "dualmamba/cost_trace.hpp"
#include "op_support.hpp"

namespace dualmamba {

using detail::require;

template <typename T>
ScanSequence<T> spatial_scan(const Tensor<T>& x) {
  require(x.rank() == 4 && x.dim(1) == x.dim(2), "spatial_scan",
          "expected square patch features (B,P,P,C), got " + shape_string(x.shape()));
  return {reshape(x, {x.dim(0), x.dim(1) * x.dim(2), x.dim(3)}), ScanOrder::spatial_row_major};
}

template <typename T>
Tensor<T> spatial_unflatten(const ScanSequence<T>& seq, std::size_t patch) {
  require(seq.tokens.rank() == 3 && seq.length() == patch * patch, "spatial_unflatten",
          "sequence " + shape_string(seq.tokens.shape()) + " does not hold a " + std::to_string(patch) + "x" +
              std::to_string(patch) + " grid");
  return reshape(seq.tokens, {seq.tokens.dim(0), patch, patch, seq.width()});
}

template <typename T>
Tensor<T> merge_bidirectional(const Tensor<T>& y0, const Tensor<T>& y1) {
  return add(y0, flip(y1, 1));
}

template <typename T>
Tensor<T> center_pixel(const Tensor<T>& x) {
  require(x.rank() == 4 && x.dim(1) == x.dim(2), "center_pixel",
          "expected square patch features (B,P,P,C), got " + shape_string(x.shape()));
  require(x.dim(1) % 2 == 1, "center_pixel", "patch side " + std::to_string(x.dim(1)) + " is even; no center pixel");
  const std::size_t c = x.dim(1) / 2;
  return narrow(narrow(x, 1, c, 1), 2, c, 1);
}

template <typename T>
SpatialMambaBlock<T>::SpatialMambaBlock(std::size_t dim, std::size_t ssm_ratio, const SsmConfig& ssm_config,
                                        Rng& rng)
    : norm_in(dim, true), proj_in(dim, dim * ssm_ratio, true, rng), norm_out(dim * ssm_ratio, true) {
  SsmConfig cfg = ssm_config;
  cfg.d_inner = dim * ssm_ratio;
  ssm = SelectiveSsm<T>(cfg, rng);
  proj_out = Linear<T>(dim * ssm_ratio, dim, true, rng);
}

template <typename T>
Tensor<T> SpatialMambaBlock<T>::branch(const Tensor<T>& x_pos) const {
  const std::size_t patch = x_pos.dim(1);
  const auto seq = spatial_scan(proj_in.forward(norm_in.forward(x_pos)));
  Tensor<T> y;
  {
    trace::Scope scope("ssm");
    y = ssm.forward(seq);
  }
  const auto grid = spatial_unflatten(ScanSequence<T>{y, seq.order}, patch);
  return proj_out.forward(norm_out.forward(grid));
}

template <typename T>
void SpatialMambaBlock<T>::visit(std::string_view prefix, const ParamVisitor<T>& fn) {
  norm_in.visit(join_name(prefix, "norm_in"), fn);
  proj_in.visit(join_name(prefix, "proj_in"), fn);
  ssm.visit(join_name(prefix, "ssm"), fn);
  norm_out.visit(join_name(prefix, "norm_out"), fn);
  proj_out.visit(join_name(prefix, "proj_out"), fn);
}

template <typename T>
SpectralMambaBlock<T>::SpectralMambaBlock(std::size_t dim, std::size_t ssm_ratio, bool bidirectional_,
                                          const SsmConfig& ssm_config, Rng& rng)
    : norm_in(dim, true), proj_in(1, ssm_ratio, true, rng), norm_out(ssm_ratio, true), bidirectional(bidirectional_) {
  SsmConfig cfg = ssm_config;
  cfg.d_inner = ssm_ratio;
  ssm_forward = SelectiveSsm<T>(cfg, rng);
  if (bidirectional) ssm_backward = SelectiveSsm<T>(cfg, rng);
  proj_out = Linear<T>(ssm_ratio, 1, true, rng);
}

template <typename T>
Tensor<T> SpectralMambaBlock<T>::branch(const Tensor<T>& x_pos) const {
  const Tensor<T> center = norm_in.forward(center_pixel(x_pos));
  const std::size_t batch = center.dim(0), dim = center.dim(3);
  const Tensor<T> tokens = proj_in.forward(reshape(center, {batch, dim, 1}));

  Tensor<T> merged;
  {
    trace::Scope scope("ssm_forward");
    merged = ssm_forward.forward({tokens, ScanOrder::spectral_forward});
  }
  if (bidirectional) {
    trace::Scope scope("ssm_backward");
    const Tensor<T> y1 = ssm_backward.forward({flip(tokens, 1), ScanOrder::spectral_reversed});
    merged = merge_bidirectional(merged, y1);
  }
  const Tensor<T> out = proj_out.forward(norm_out.forward(merged));
  return reshape(out, {batch, 1, 1, dim});
}

template <typename T>
void SpectralMambaBlock<T>::visit(std::string_view prefix, const ParamVisitor<T>& fn) {
  norm_in.visit(join_name(prefix, "norm_in"), fn);
  proj_in.visit(join_name(prefix, "proj_in"), fn);
  ssm_forward.visit(join_name(prefix, "ssm_forward"), fn);
  if (bidirectional) ssm_backward.visit(join_name(prefix, "ssm_backward"), fn);
  norm_out.visit(join_name(prefix, "norm_out"), fn);
  proj_out.visit(join_name(prefix, "proj_out"), fn);
}

template <typename T>
typename CrossAttentionFusion<T>::Result CrossAttentionFusion<T>::forward(const Tensor<T>& g_spe,
                                                                           const Tensor<T>& g_spa,
                                                                           const Tensor<T>& x_pos) const {
  require(g_spa.rank() == 4 && g_spa.shape() == x_pos.shape(), "cross_attention_fusion",
          "G_spa " + shape_string(g_spa.shape()) + " and X_pos " + shape_string(x_pos.shape()) + " must match");
  require(g_spe.rank() == 4 && g_spe.dim(0) == g_spa.dim(0) && g_spe.dim(1) == 1 && g_spe.dim(2) == 1 &&
              g_spe.dim(3) == g_spa.dim(3),
          "cross_attention_fusion", "G_spe must be (B,1,1,D), got " + shape_string(g_spe.shape()));
  Result r;
  r.attn_spe = softmax(norm_spe.forward(g_spe), 3);
  r.attn_spa = softmax(spatial_mean(norm_spa.forward(g_spa)), 3);
  r.fused = add(add(mul(r.attn_spe, g_spa), mul(r.attn_spa, g_spe)), x_pos);
  return r;
}

template <typename T>
void CrossAttentionFusion<T>::visit(std::string_view prefix, const ParamVisitor<T>& fn) {
  norm_spe.visit(join_name(prefix, "norm_spe"), fn);
  norm_spa.visit(join_name(prefix, "norm_spa"), fn);
}

#define DUALMAMBA_INSTANTIATE_MAMBA(T)                                              \
  template ScanSequence<T> spatial_scan<T>(const Tensor<T>&);                       \
  template Tensor<T> spatial_unflatten<T>(const ScanSequence<T>&, std::size_t);     \
  template Tensor<T> merge_bidirectional<T>(const Tensor<T>&, const Tensor<T>&);    \
  template Tensor<T> center_pixel<T>(const Tensor<T>&);                             \
  template struct SpatialMambaBlock<T>;                                             \
  template struct SpectralMambaBlock<T>;                                            \
  template struct CrossAttentionFusion<T>;

DUALMAMBA_INSTANTIATE_MAMBA(float)
DUALMAMBA_INSTANTIATE_MAMBA(double)

}  // namespace dualmamba
