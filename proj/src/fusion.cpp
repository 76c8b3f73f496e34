#include "dualmamba/fusion.hpp"

#include "op_support.hpp"

namespace dualmamba {

std::string_view to_string(FusionStrategy s) {
  switch (s) {
    case FusionStrategy::sum: return "sum";
    case FusionStrategy::concat_linear: return "concat_linear";
    case FusionStrategy::learnable: return "learnable";
    case FusionStrategy::adaptive: return "adaptive";
  }
  return "unknown";
}

FusionStrategy parse_fusion_strategy(std::string_view tag) {
  for (auto s : {FusionStrategy::sum, FusionStrategy::concat_linear, FusionStrategy::learnable,
                 FusionStrategy::adaptive}) {
    if (tag == to_string(s)) return s;
  }
  throw ConfigError("unknown fusion strategy '" + std::string(tag) +
                    "' (expected sum, concat_linear, learnable or adaptive)");
}

std::string_view to_string(Readout r) { return r == Readout::mean ? "mean" : "center"; }

Readout parse_readout(std::string_view tag) {
  if (tag == "mean") return Readout::mean;
  if (tag == "center") return Readout::center;
  throw ConfigError("unknown readout '" + std::string(tag) + "' (expected mean or center)");
}

template <typename T>
GlobalLocalFusion<T>::GlobalLocalFusion(std::size_t dim, FusionStrategy strategy_, Rng& rng) : strategy(strategy_) {
  switch (strategy) {
    case FusionStrategy::adaptive:
      if (dim < 2 || dim % 2 != 0) throw ConfigError("adaptive fusion needs an even channel count, got " + std::to_string(dim));
      squeeze = Linear<T>(dim, dim / 2, true, rng);
      squeeze_norm = BatchNorm<T>(dim / 2);
      gate = Linear<T>(dim / 2, 1, true, rng);
      break;
    case FusionStrategy::concat_linear:
      mix = Linear<T>(2 * dim, dim, true, rng);
      break;
    case FusionStrategy::learnable:
      alpha = Tensor<T>(Shape{1}, T(1));
      beta = Tensor<T>(Shape{1}, T(1));
      break;
    case FusionStrategy::sum:
      break;
  }
}

template <typename T>
typename GlobalLocalFusion<T>::Result GlobalLocalFusion<T>::forward(const Tensor<T>& g, const Tensor<T>& l,
                                                                     Mode mode) {
  detail::require(g.rank() == 4 && g.shape() == l.shape(), "fusion",
                  "global " + shape_string(g.shape()) + " and local " + shape_string(l.shape()) +
                      " features must be equal (B,P,P,D) shapes");
  Result r;
  switch (strategy) {
    case FusionStrategy::sum:
      r.fused = add(g, l);
      break;
    case FusionStrategy::concat_linear:
      r.fused = mix.forward(concat<T>({g, l}, 3));
      break;
    case FusionStrategy::learnable: {
      const Tensor<T> a = reshape(alpha, {1, 1, 1, 1});
      const Tensor<T> b = reshape(beta, {1, 1, 1, 1});
      r.fused = add(mul(a, g), mul(b, l));
      break;
    }
    case FusionStrategy::adaptive: {
      const Tensor<T> gl = add(g, l);
      const std::size_t batch = g.dim(0), dim = g.dim(3);
      const Tensor<T> s = reshape(spatial_mean(gl), {batch, dim});
      const Tensor<T> z = gate.forward(relu(squeeze_norm.forward(squeeze.forward(s), mode)));
      const Tensor<T> w_g = reshape(sigmoid(z), {batch, 1, 1, 1});
      const Tensor<T> w_l = add_scalar(scale(w_g, T(-1)), T(1));
      for (std::size_t b = 0; b < batch; ++b) {
        // sigmoid may round to exactly 0 or 1 in single precision.
        if (!(w_g[b] >= T(0) && w_g[b] <= T(1)) || w_l[b] != T(1) - w_g[b]) {
          throw NumericError("adaptive fusion: global weight " + std::to_string(static_cast<double>(w_g[b])) +
                             " of sample " + std::to_string(b) + " violates 0 <= W_g <= 1, W_l = 1 - W_g");
        }
      }
      r.fused = add(add(gl, mul(w_g, g)), mul(w_l, l));
      r.global_weight = w_g;
      break;
    }
  }
  return r;
}

template <typename T>
void GlobalLocalFusion<T>::visit(std::string_view prefix, const ParamVisitor<T>& fn) {
  switch (strategy) {
    case FusionStrategy::adaptive:
      squeeze.visit(join_name(prefix, "squeeze"), fn);
      squeeze_norm.visit(join_name(prefix, "squeeze_norm"), fn);
      gate.visit(join_name(prefix, "gate"), fn);
      break;
    case FusionStrategy::concat_linear:
      mix.visit(join_name(prefix, "mix"), fn);
      break;
    case FusionStrategy::learnable:
      fn(join_name(prefix, "alpha"), alpha, ParamKind::weight);
      fn(join_name(prefix, "beta"), beta, ParamKind::weight);
      break;
    case FusionStrategy::sum:
      break;
  }
}

template <typename T>
Classifier<T>::Classifier(std::size_t dim, std::size_t classes, Readout readout_, Rng& rng)
    : fc(dim, classes, true, rng), readout(readout_) {}

template <typename T>
Tensor<T> Classifier<T>::forward(const Tensor<T>& f) const {
  detail::require(f.rank() == 4 && f.dim(1) == f.dim(2), "classify",
                  "expected (B,P,P,D) features, got " + shape_string(f.shape()));
  Tensor<T> pooled;
  if (readout == Readout::mean) {
    pooled = spatial_mean(f);
  } else {
    detail::require(f.dim(1) % 2 == 1, "classify", "center readout needs an odd patch side");
    const std::size_t c = f.dim(1) / 2;
    pooled = narrow(narrow(f, 1, c, 1), 2, c, 1);
  }
  return fc.forward(reshape(pooled, {f.dim(0), f.dim(3)}));
}

template struct GlobalLocalFusion<float>;
template struct GlobalLocalFusion<double>;
template struct Classifier<float>;
template struct Classifier<double>;

}  // namespace dualmamba
