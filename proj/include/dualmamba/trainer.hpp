#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dualmamba/config.hpp"
#include "dualmamba/metrics.hpp"
#include "dualmamba/model.hpp"

namespace dualmamba {

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based, contiguous
  double loss = 0.0;      // mean cross-entropy over the epoch's samples
  double train_accuracy = 0.0;
  double lr = 0.0;
};

/// Per-run record. to_text() is line-oriented `key=value` and fully
/// deterministic (no timings); summary() is for humans and includes wall time.
struct RunLog {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::size_t train_pixels = 0;
  std::size_t test_pixels = 0;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // lowest training loss
  std::optional<Metrics> final_metrics;
  double wall_seconds = 0.0;

  std::string to_text() const;
  std::string summary() const;
};

struct RunResult {
  RunLog log;
  ConfusionMatrix confusion{0};
  std::filesystem::path final_checkpoint;
  std::filesystem::path best_checkpoint;
};

// Loads both rasters, fills bands/classes into the config, normalizes.
HsiCube load_training_cube(TrainConfig& config);

/// One seeded run: split, init, AdamW + StepLR training, then evaluation of
/// the final epoch on the test split. Writes best.ckpt, final.ckpt, run.log
/// and summary.txt under run_dir. NumericError on a non-finite loss, naming
/// the epoch and batch.
RunResult train_run(const TrainConfig& config, const HsiCube& cube, std::uint64_t seed,
                    const std::filesystem::path& run_dir);

// Eval-mode class predictions (0-based) for `pixels`, in order.
std::vector<std::size_t> predict(DualMamba<float>& model, const HsiCube& cube, const std::vector<Pixel>& pixels,
                                 std::size_t batch_size);

ConfusionMatrix evaluate_pixels(DualMamba<float>& model, const HsiCube& cube, const std::vector<Pixel>& pixels,
                                std::size_t batch_size);

struct SeedSummary {
  double oa_mean = 0, oa_std = 0, aa_mean = 0, aa_std = 0, kappa_mean = 0, kappa_std = 0;
};

// Sample mean and standard deviation (n - 1) across runs; std is 0 for one run.
SeedSummary summarize(const std::vector<Metrics>& runs);

}  // namespace dualmamba
