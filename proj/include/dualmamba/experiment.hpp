#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "dualmamba/config.hpp"
#include "dualmamba/metrics.hpp"
#include "dualmamba/trainer.hpp"

namespace dualmamba {

// One train_run per configured seed, each under out_dir/seed_<s>.
std::vector<RunResult> train_seeds(const TrainConfig& config, const HsiCube& cube, const std::filesystem::path& out_dir);

// Per-seed OA/AA/kappa rows followed by mean and sample std.
std::string format_seed_table(const std::vector<RunLog>& logs);

enum class AblationAxis { spectral_scan, fusion };

// "spectral-scan" or "fusion"; ConfigError otherwise.
AblationAxis parse_ablation_axis(std::string_view text);

struct AblationRow {
  std::string tag;  // variant value, e.g. "adaptive" or "unidirectional"
  std::uint64_t params = 0;
  std::vector<Metrics> runs;  // one per seed
  SeedSummary summary;
};

/// Trains every variant of the axis over every seed, all other settings
/// taken from config. Runs land in out_dir/<tag>/seed_<s>.
/// Rows: fusion -> sum, concat_linear, learnable, adaptive;
///       spectral-scan -> unidirectional, bidirectional.
std::vector<AblationRow> run_ablation(const TrainConfig& config, const HsiCube& cube, AblationAxis axis,
                                      const std::filesystem::path& out_dir);

std::string format_ablation(const std::vector<AblationRow>& rows);

struct Evaluation {
  ConfusionMatrix confusion{0};
  Metrics metrics;
  // Predicted class (1-based) at every labeled pixel, 0 elsewhere. Only
  // filled when requested.
  std::vector<std::uint16_t> prediction_map;
};

/// Rebuilds the model from config, loads the checkpoint (ConfigError on an
/// architecture mismatch) and scores the test split drawn with `seed`.
Evaluation evaluate_checkpoint(const TrainConfig& config, const HsiCube& cube, const std::filesystem::path& checkpoint,
                               std::uint64_t seed, bool with_map);

}  // namespace dualmamba
