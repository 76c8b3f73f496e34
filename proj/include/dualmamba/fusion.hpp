#pragma once

#include <cstddef>
#include <string>
#include <string_view>

#include "dualmamba/layers.hpp"

namespace dualmamba {

enum class FusionStrategy { sum, concat_linear, learnable, adaptive };

std::string_view to_string(FusionStrategy s);
// Accepts "sum", "concat_linear", "learnable", "adaptive"; ConfigError otherwise.
FusionStrategy parse_fusion_strategy(std::string_view tag);

/// Merges the global (Mamba) and local (conv) streams, both (B,P,P,D).
///
/// adaptive: s = avgpool(G + L); z = Linear(D/2 -> 1)(ReLU(BN(Linear(D -> D/2)(s))))
///           W_g = sigmoid(z) per sample, F = G + L + W_g G + (1 - W_g) L
/// sum: G + L; concat_linear: pointwise 2D -> D over [G, L]; learnable: alpha G + beta L.
template <typename T>
struct GlobalLocalFusion {
  struct Result {
    Tensor<T> fused;
    Tensor<T> global_weight;  // (B,1,1,1); adaptive only
  };

  FusionStrategy strategy = FusionStrategy::adaptive;
  Linear<T> squeeze;       // adaptive: D -> D/2
  BatchNorm<T> squeeze_norm;
  Linear<T> gate;          // adaptive: D/2 -> 1
  Linear<T> mix;           // concat_linear: 2D -> D
  Tensor<T> alpha, beta;   // learnable: scalars stored as (1)

  GlobalLocalFusion() = default;
  GlobalLocalFusion(std::size_t dim, FusionStrategy strategy, Rng& rng);

  Result forward(const Tensor<T>& g, const Tensor<T>& l, Mode mode);
  void visit(std::string_view prefix, const ParamVisitor<T>& fn);
};

enum class Readout { mean, center };

std::string_view to_string(Readout r);
Readout parse_readout(std::string_view tag);

/// Pools (B,P,P,D) to (B,D) (spatial mean or center pixel), then affine D -> classes.
template <typename T>
struct Classifier {
  Linear<T> fc;
  Readout readout = Readout::mean;

  Classifier() = default;
  Classifier(std::size_t dim, std::size_t classes, Readout readout, Rng& rng);

  Tensor<T> forward(const Tensor<T>& f) const;
  void visit(std::string_view prefix, const ParamVisitor<T>& fn) { fc.visit(prefix, fn); }
};

}  // namespace dualmamba
