#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "dualmamba/hsi.hpp"
#include "dualmamba/model.hpp"
#include "dualmamba/split.hpp"

namespace dualmamba {

/// Training run description, read from flat `key = value` text.
///
/// Keys (defaults in parentheses):
///   data, labels        HSIC / HSIL paths, relative to the config file
///   bands, classes      (0 = take from the data files)
///   embed_dim (64) state_dim (16) ssm_ratio (2) patch (7) blocks (1) embed_groups (4)
///   spectral_scan       bidirectional | unidirectional (bidirectional)
///   fusion              sum | concat_linear | learnable | adaptive (adaptive)
///   dt_rank (0 = auto)  discretization zoh | euler (zoh)
///   attn_norm_affine (false)  readout mean | center (mean)  d_skip (false)
///   split (0.1)         proportion or counts:n1,n2,...
///   batch_size (64) lr (0.001) weight_decay (0.01) epochs (300) lr_step (20) lr_gamma (0.9)
///   seeds (0)           comma separated
///   normalize           standardize | minmax (standardize)
///   output (runs)       directory, relative to the config file
struct TrainConfig {
  ModelConfig model;
  std::filesystem::path data;
  std::filesystem::path labels;
  SplitSpec split;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  double weight_decay = 0.01;
  std::size_t epochs = 300;
  std::size_t lr_step = 20;
  double lr_gamma = 0.9;
  std::vector<std::uint64_t> seeds{0};
  Normalization normalization = Normalization::standardize;
  std::filesystem::path output = "runs";

  // ConfigError naming the line for unknown keys or malformed values.
  static TrainConfig parse(std::string_view text, const std::filesystem::path& base_dir = {});
  static TrainConfig load(const std::filesystem::path& path);

  void validate() const;
  // Every setting, one `key = value` per line, in a fixed order.
  std::string canonical() const;
  std::string hash() const;  // 16 hex digits of fnv1a64(canonical())
};

// Copies bands/classes from the cube when left at 0; ConfigError if they
// disagree with the cube.
void resolve_data_shape(TrainConfig& config, const HsiCube& cube);

}  // namespace dualmamba
