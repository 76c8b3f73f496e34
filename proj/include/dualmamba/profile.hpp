#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dualmamba/model.hpp"

namespace dualmamba {

/// Parameter and compute accounting per top-level submodule
/// ("embed", "block0.dpe", ..., "classifier").
///
/// flops counts a multiply-accumulate as 2 FLOPs; macs counts it once and
/// ignores elementwise work (norms, activations, softmax), which contributes
/// to flops only at 1 FLOP per element pass.
struct CostReport {
  struct Line {
    std::string name;
    std::uint64_t params = 0;
    std::uint64_t flops = 0;
    std::uint64_t macs = 0;
  };

  std::vector<Line> lines;

  std::uint64_t total_params() const;
  std::uint64_t total_flops() const;
  std::uint64_t total_macs() const;
  const Line* find(const std::string& name) const;

  std::string table() const;
  // "params.<line>=N", "flops.<line>=N", "macs.<line>=N", then totals.
  std::string key_values() const;
};

// Submodule line a tensor or scope name belongs to: the first two dotted
// components for "block<i>.*" names, the first component otherwise.
std::string report_line_name(const std::string& name);

// Learned weights only; buffers (BN running statistics) are not counted.
CostReport count_params(DualMamba<float>& model);
// Traces one eval-mode forward of a single (P,P,bands) patch.
CostReport count_flops(DualMamba<float>& model);
// Both, merged line by line, for a freshly built model.
CostReport profile(const ModelConfig& config);

}  // namespace dualmamba
