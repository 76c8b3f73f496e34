// dualmamba: train, evaluate, profile and ablate DualMamba HSI classifiers.
//
// Exit codes: 0 success, 1 runtime failure (one-line reason on stderr),
// 2 bad command line (usage on stderr).

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dualmamba/error.hpp"
#include "dualmamba/experiment.hpp"
#include "dualmamba/profile.hpp"
#include "dualmamba/render.hpp"
#include "dualmamba/selftest.hpp"
#include "dualmamba/synthetic.hpp"
#include "dualmamba/trainer.hpp"

namespace fs = std::filesystem;
using namespace dualmamba;

namespace {

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << text;
}

TrainConfig load_config(const std::string& path, const std::optional<std::string>& output) {
  TrainConfig config = TrainConfig::load(path);
  if (output) config.output = *output;
  return config;
}

int cmd_train(const std::string& config_path, const std::optional<std::string>& output) {
  TrainConfig config = load_config(config_path, output);
  const HsiCube cube = load_training_cube(config);
  fs::create_directories(config.output);
  write_file(config.output / "config.txt", config.canonical());

  std::vector<RunLog> logs;
  for (const auto seed : config.seeds) {
    const RunResult run = train_run(config, cube, seed, config.output / ("seed_" + std::to_string(seed)));
    std::cout << run.log.summary() << std::flush;
    logs.push_back(run.log);
  }
  const std::string table = format_seed_table(logs);
  write_file(config.output / "seeds.txt", table);
  std::cout << '\n' << table;
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint, const std::optional<std::string>& map,
             std::optional<std::uint64_t> seed) {
  TrainConfig config = TrainConfig::load(config_path);
  const HsiCube cube = load_training_cube(config);
  const Evaluation ev = evaluate_checkpoint(config, cube, checkpoint, seed.value_or(config.seeds.front()), map.has_value());

  const Metrics& m = ev.metrics;
  std::cout << "test pixels " << ev.confusion.total() << "\n";
  std::printf("OA %.4f  AA %.4f  kappa %.4f\n", m.overall_accuracy, m.average_accuracy, m.kappa);
  for (std::size_t k = 0; k < m.per_class.size(); ++k) {
    const std::string& name = k < cube.class_names.size() ? cube.class_names[k] : std::to_string(k + 1);
    if (m.per_class[k]) std::printf("  class %zu %-24s %.4f\n", k + 1, name.c_str(), *m.per_class[k]);
  }
  if (map) {
    write_ppm(*map, cube.height, cube.width, ev.prediction_map, default_palette(cube.num_classes()));
    std::cout << "map written to " << *map << "\n";
  }
  return 0;
}

int cmd_profile(const std::string& config_path, bool key_values) {
  TrainConfig config = TrainConfig::load(config_path);
  if (config.model.bands == 0 || config.model.classes == 0) {
    if (config.data.empty() || config.labels.empty())
      throw ConfigError("profile: set bands and classes, or data and labels to read them from");
    const HsiCube cube = load_cube(config.data, config.labels);
    resolve_data_shape(config, cube);
  }
  const CostReport report = profile(config.model);
  std::cout << (key_values ? report.key_values() : report.table());
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& axis_name, const std::optional<std::string>& output) {
  const AblationAxis axis = parse_ablation_axis(axis_name);
  TrainConfig config = load_config(config_path, output);
  const HsiCube cube = load_training_cube(config);
  const auto rows = run_ablation(config, cube, axis, config.output / ("ablate_" + axis_name));
  const std::string table = format_ablation(rows);
  write_file(config.output / ("ablate_" + axis_name + ".txt"), table);
  std::cout << table;
  return 0;
}

int cmd_selftest() {
  bool ok = true;
  for (const auto& r : run_selftest()) {
    std::cout << format_check(r) << std::endl;
    ok = ok && r.passed;
  }
  std::cout << (ok ? "selftest passed" : "selftest FAILED") << "\n";
  return ok ? 0 : 1;
}

int cmd_synth(const std::string& out_dir, const SyntheticSpec& spec) {
  const HsiCube cube = generate_synthetic(spec);
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  write_hsic(dir / "synthetic.hsic", {cube.height, cube.width, cube.bands, cube.values});
  write_hsil(dir / "synthetic.hsil", {cube.height, cube.width, cube.class_names, cube.labels});
  write_file(dir / "synthetic.cfg",
             "# Generated synthetic scene: 10% split, 50 epochs of the default schedule.\n"
             "data = synthetic.hsic\n"
             "labels = synthetic.hsil\n"
             "epochs = 50\n"
             "seeds = 0\n"
             "output = runs\n");
  std::printf("wrote %s/synthetic.{hsic,hsil,cfg}: %zux%zux%zu, %zu classes, nearest-signature error %.4f\n",
              out_dir.c_str(), cube.height, cube.width, cube.bands, cube.num_classes(), nearest_signature_error(cube));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DualMamba hyperspectral image classification"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  std::string config_path, checkpoint, axis, synth_dir;
  std::optional<std::string> output, map;
  std::optional<std::uint64_t> eval_seed;
  bool key_values = false;
  SyntheticSpec spec;

  auto* train = app.add_subcommand("train", "Train every configured seed");
  train->add_option("config", config_path, "Config file")->required()->check(CLI::ExistingFile);
  train->add_option("--output", output, "Override the output directory");

  auto* eval = app.add_subcommand("eval", "Score a checkpoint on the test split");
  eval->add_option("config", config_path, "Config file")->required()->check(CLI::ExistingFile);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--map", map, "Write a classification map (PPM)");
  eval->add_option("--seed", eval_seed, "Split seed (default: first configured seed)");

  auto* prof = app.add_subcommand("profile", "Parameter and FLOP breakdown");
  prof->add_option("config", config_path, "Config file")->required()->check(CLI::ExistingFile);
  prof->add_flag("--key-values", key_values, "Machine-readable key=value output");

  auto* ablate = app.add_subcommand("ablate", "Train every variant of one design axis");
  ablate->add_option("config", config_path, "Config file")->required()->check(CLI::ExistingFile);
  ablate->add_option("--axis", axis, "spectral-scan or fusion")
      ->required()
      ->check(CLI::IsMember({"spectral-scan", "fusion"}));
  ablate->add_option("--output", output, "Override the output directory");

  auto* selftest = app.add_subcommand("selftest", "Run the built-in oracle and gradient checks");

  auto* synth = app.add_subcommand("synth", "Write a synthetic labeled scene and a config for it");
  synth->add_option("--out", synth_dir, "Output directory")->required();
  synth->add_option("--seed", spec.seed, "Generator seed");
  synth->add_option("--size", spec.height, "Height and width");
  synth->add_option("--bands", spec.bands, "Spectral bands");
  synth->add_option("--classes", spec.classes, "Classes");
  synth->add_option("--noise", spec.noise, "Gaussian noise sigma");
  synth->add_option("--gutter", spec.gutter, "Unlabeled strip width between class blocks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train) return cmd_train(config_path, output);
    if (*eval) return cmd_eval(config_path, checkpoint, map, eval_seed);
    if (*prof) return cmd_profile(config_path, key_values);
    if (*ablate) return cmd_ablate(config_path, axis, output);
    if (*selftest) return cmd_selftest();
    if (*synth) {
      spec.width = spec.height;
      return cmd_synth(synth_dir, spec);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
