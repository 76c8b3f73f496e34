#include "dualmamba/experiment.hpp"

#include <cstdio>
#include <sstream>

#include "dualmamba/error.hpp"
#include "dualmamba/profile.hpp"
#include "dualmamba/split.hpp"

namespace dualmamba {

namespace {

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

std::filesystem::path seed_dir(const std::filesystem::path& root, std::uint64_t seed) {
  return root / ("seed_" + std::to_string(seed));
}

}  // namespace

std::vector<RunResult> train_seeds(const TrainConfig& config, const HsiCube& cube, const std::filesystem::path& out_dir) {
  std::vector<RunResult> out;
  out.reserve(config.seeds.size());
  for (const auto seed : config.seeds) out.push_back(train_run(config, cube, seed, seed_dir(out_dir, seed)));
  return out;
}

std::string format_seed_table(const std::vector<RunLog>& logs) {
  std::ostringstream os;
  os << "seed      OA      AA      kappa\n";
  std::vector<Metrics> runs;
  for (const auto& log : logs) {
    if (!log.final_metrics) continue;
    const Metrics& m = *log.final_metrics;
    runs.push_back(m);
    os << pad(std::to_string(log.seed), 8) << "  " << fixed(m.overall_accuracy) << "  " << fixed(m.average_accuracy)
       << "  " << fixed(m.kappa) << '\n';
  }
  if (runs.empty()) return os.str() + "(no test pixels)\n";
  const SeedSummary s = summarize(runs);
  os << "mean      " << fixed(s.oa_mean) << "  " << fixed(s.aa_mean) << "  " << fixed(s.kappa_mean) << '\n'
     << "std       " << fixed(s.oa_std) << "  " << fixed(s.aa_std) << "  " << fixed(s.kappa_std) << '\n';
  return os.str();
}

AblationAxis parse_ablation_axis(std::string_view text) {
  if (text == "spectral-scan") return AblationAxis::spectral_scan;
  if (text == "fusion") return AblationAxis::fusion;
  throw ConfigError("unknown ablation axis '" + std::string(text) + "' (expected spectral-scan or fusion)");
}

std::vector<AblationRow> run_ablation(const TrainConfig& config, const HsiCube& cube, AblationAxis axis,
                                      const std::filesystem::path& out_dir) {
  std::vector<std::pair<std::string, TrainConfig>> variants;
  if (axis == AblationAxis::fusion) {
    for (const auto s : {FusionStrategy::sum, FusionStrategy::concat_linear, FusionStrategy::learnable,
                         FusionStrategy::adaptive}) {
      TrainConfig c = config;
      c.model.fusion = s;
      variants.emplace_back(std::string(to_string(s)), c);
    }
  } else {
    for (const bool bidirectional : {false, true}) {
      TrainConfig c = config;
      c.model.spectral_bidirectional = bidirectional;
      variants.emplace_back(bidirectional ? "bidirectional" : "unidirectional", c);
    }
  }

  std::vector<AblationRow> rows;
  for (const auto& [tag, variant] : variants) {
    AblationRow row;
    row.tag = tag;
    row.params = profile(variant.model).total_params();
    for (const auto& run : train_seeds(variant, cube, out_dir / tag)) {
      if (run.log.final_metrics) row.runs.push_back(*run.log.final_metrics);
    }
    if (!row.runs.empty()) row.summary = summarize(row.runs);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_ablation(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "variant          params   runs  OA mean (std)     AA mean   kappa mean\n";
  for (const auto& r : rows) {
    os << pad(r.tag, 15) << "  " << pad(std::to_string(r.params), 7) << "  " << pad(std::to_string(r.runs.size()), 4)
       << "  " << fixed(r.summary.oa_mean) << " (" << fixed(r.summary.oa_std) << ")  " << fixed(r.summary.aa_mean)
       << "    " << fixed(r.summary.kappa_mean) << '\n';
  }
  return os.str();
}

Evaluation evaluate_checkpoint(const TrainConfig& config, const HsiCube& cube, const std::filesystem::path& checkpoint,
                               std::uint64_t seed, bool with_map) {
  Rng unused(0);
  DualMamba<float> model(config.model, unused);
  load_checkpoint(checkpoint, model, nullptr);

  const SampleSplit split = split_samples(cube.labels, cube.width, cube.num_classes(), config.split, seed);
  const auto test = split.test();
  if (test.empty()) throw ConfigError("evaluate: the split leaves no test pixels");

  Evaluation ev;
  ev.confusion = evaluate_pixels(model, cube, test, config.batch_size);
  ev.metrics = compute_metrics(ev.confusion);
  if (with_map) {
    std::vector<Pixel> labeled;
    for (std::size_t r = 0; r < cube.height; ++r)
      for (std::size_t c = 0; c < cube.width; ++c)
        if (cube.label(r, c) != 0) labeled.push_back({r, c});
    const auto pred = predict(model, cube, labeled, config.batch_size);
    ev.prediction_map.assign(cube.height * cube.width, 0);
    for (std::size_t i = 0; i < labeled.size(); ++i)
      ev.prediction_map[labeled[i].row * cube.width + labeled[i].col] = static_cast<std::uint16_t>(pred[i] + 1);
  }
  return ev;
}

}  // namespace dualmamba
