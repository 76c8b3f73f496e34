#include "dualmamba/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dualmamba/optim.hpp"
#include "dualmamba/split.hpp"

namespace dualmamba {

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << text;
}

// Contiguous batches over `order`; a trailing single sample joins the previous
// batch so batch statistics are never taken over one sample.
std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, std::size_t batch_size) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t b = 0; b < n; b += batch_size) out.emplace_back(b, std::min(n, b + batch_size));
  if (out.size() > 1 && out.back().second - out.back().first == 1) {
    out.pop_back();
    out.back().second = n;
  }
  return out;
}

std::size_t argmax_row(const Tensor<float>& logits, std::size_t row) {
  const std::size_t K = logits.dim(1);
  std::size_t best = 0;
  for (std::size_t k = 1; k < K; ++k) {
    if (logits[row * K + k] > logits[row * K + best]) best = k;
  }
  return best;
}

}  // namespace

std::string RunLog::to_text() const {
  std::ostringstream os;
  os << "config_hash=" << config_hash << '\n'
     << "seed=" << seed << '\n'
     << "train_pixels=" << train_pixels << '\n'
     << "test_pixels=" << test_pixels << '\n';
  for (const auto& e : epochs) {
    os << "epoch=" << e.epoch << " loss=" << fmt("%.9g", e.loss) << " train_acc=" << fmt("%.6f", e.train_accuracy)
       << " lr=" << fmt("%.9g", e.lr) << '\n';
  }
  os << "best_epoch=" << best_epoch << '\n';
  if (final_metrics) {
    os << "oa=" << fmt("%.6f", final_metrics->overall_accuracy) << " aa=" << fmt("%.6f", final_metrics->average_accuracy)
       << " kappa=" << fmt("%.6f", final_metrics->kappa) << '\n';
    for (std::size_t k = 0; k < final_metrics->per_class.size(); ++k) {
      if (final_metrics->per_class[k]) os << "class=" << k + 1 << " acc=" << fmt("%.6f", *final_metrics->per_class[k]) << '\n';
    }
  }
  return os.str();
}

std::string RunLog::summary() const {
  std::ostringstream os;
  os << "seed " << seed << ": " << epochs.size() << " epochs, " << train_pixels << " train / " << test_pixels
     << " test pixels, " << fmt("%.1f", wall_seconds) << " s\n";
  if (!epochs.empty()) {
    os << "  final loss " << fmt("%.4f", epochs.back().loss) << ", train acc " << fmt("%.4f", epochs.back().train_accuracy)
       << ", best loss at epoch " << best_epoch << '\n';
  }
  if (final_metrics) {
    os << "  test OA " << fmt("%.4f", final_metrics->overall_accuracy) << ", AA "
       << fmt("%.4f", final_metrics->average_accuracy) << ", kappa " << fmt("%.4f", final_metrics->kappa) << '\n';
  }
  return os.str();
}

HsiCube load_training_cube(TrainConfig& config) {
  if (config.data.empty() || config.labels.empty()) throw ConfigError("config must set both data and labels");
  HsiCube cube = load_cube(config.data, config.labels);
  resolve_data_shape(config, cube);
  normalize(cube, config.normalization);
  return cube;
}

std::vector<std::size_t> predict(DualMamba<float>& model, const HsiCube& cube, const std::vector<Pixel>& pixels,
                                 std::size_t batch_size) {
  std::vector<std::size_t> out;
  out.reserve(pixels.size());
  const std::span<const Pixel> all(pixels);
  for (std::size_t b = 0; b < pixels.size(); b += batch_size) {
    const std::size_t n = std::min(batch_size, pixels.size() - b);
    const Tensor<float> logits = model.forward(extract_batch(cube, all.subspan(b, n), model.config().patch), Mode::eval);
    for (std::size_t i = 0; i < n; ++i) out.push_back(argmax_row(logits, i));
  }
  return out;
}

ConfusionMatrix evaluate_pixels(DualMamba<float>& model, const HsiCube& cube, const std::vector<Pixel>& pixels,
                                std::size_t batch_size) {
  ConfusionMatrix cm(model.config().classes);
  const auto pred = predict(model, cube, pixels, batch_size);
  for (std::size_t i = 0; i < pixels.size(); ++i) cm.add(cube.label(pixels[i].row, pixels[i].col) - 1u, pred[i]);
  return cm;
}

RunResult train_run(const TrainConfig& config, const HsiCube& cube, std::uint64_t seed,
                    const std::filesystem::path& run_dir) {
  const auto start = std::chrono::steady_clock::now();
  std::filesystem::create_directories(run_dir);
  const ModelConfig& mc = config.model;
  if (mc.bands != cube.bands || mc.classes != cube.num_classes()) {
    throw ConfigError("train: model expects " + std::to_string(mc.bands) + " bands / " + std::to_string(mc.classes) +
                      " classes, data has " + std::to_string(cube.bands) + " / " + std::to_string(cube.num_classes()));
  }

  const SampleSplit split = split_samples(cube.labels, cube.width, cube.num_classes(), config.split, seed);
  std::vector<Pixel> train_pixels = split.train();
  const std::vector<Pixel> test_pixels = split.test();
  if (train_pixels.empty()) throw ConfigError("train: no labeled training pixels");

  Rng init_rng = Rng::stream(seed, "init");
  DualMamba<float> model(mc, init_rng);
  AdamWConfig opt_cfg;
  opt_cfg.lr = config.lr;
  opt_cfg.weight_decay = config.weight_decay;
  AdamW<float> optimizer(model.parameters(), opt_cfg);
  Rng shuffle_rng = Rng::stream(seed, "shuffle");

  RunResult result;
  result.log.config_hash = config.hash();
  result.log.seed = seed;
  result.log.train_pixels = train_pixels.size();
  result.log.test_pixels = test_pixels.size();
  result.best_checkpoint = run_dir / "best.ckpt";
  result.final_checkpoint = run_dir / "final.ckpt";

  double best_loss = std::numeric_limits<double>::infinity();
  std::vector<int> targets;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const double lr = step_lr(config.lr, config.lr_gamma, static_cast<int>(config.lr_step), static_cast<int>(epoch));
    optimizer.set_lr(lr);
    shuffle_rng.shuffle(train_pixels.begin(), train_pixels.end());

    double loss_sum = 0.0;
    std::size_t correct = 0;
    const auto ranges = batch_ranges(train_pixels.size(), config.batch_size);
    for (std::size_t bi = 0; bi < ranges.size(); ++bi) {
      const auto [begin, end] = ranges[bi];
      const std::span<const Pixel> batch(train_pixels.data() + begin, end - begin);
      targets.clear();
      for (const auto& p : batch) targets.push_back(static_cast<int>(cube.label(p.row, p.col)) - 1);

      Tape<float> tape;
      Tensor<float> logits, loss;
      try {
        GradScope<float> scope(tape);
        logits = model.forward(extract_batch(cube, batch, mc.patch), Mode::train);
        loss = cross_entropy(logits, std::span<const int>(targets));
        backward(loss);
        optimizer.step();
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", batch " + std::to_string(bi + 1) +
                           ": " + e.what());
      }
      optimizer.zero_grad();

      loss_sum += static_cast<double>(loss.item()) * static_cast<double>(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) {
        if (static_cast<int>(argmax_row(logits, i)) == targets[i]) ++correct;
      }
    }
    const double n = static_cast<double>(train_pixels.size());
    result.log.epochs.push_back({epoch, loss_sum / n, static_cast<double>(correct) / n, lr});
    if (loss_sum / n < best_loss) {
      best_loss = loss_sum / n;
      result.log.best_epoch = epoch;
      save_checkpoint(result.best_checkpoint, model, &optimizer);
    }
  }
  save_checkpoint(result.final_checkpoint, model, &optimizer);

  result.confusion = ConfusionMatrix(mc.classes);
  if (!test_pixels.empty()) {
    result.confusion = evaluate_pixels(model, cube, test_pixels, config.batch_size);
    result.log.final_metrics = compute_metrics(result.confusion);
  }
  result.log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_text(run_dir / "run.log", result.log.to_text());
  write_text(run_dir / "summary.txt", result.log.summary());
  return result;
}

SeedSummary summarize(const std::vector<Metrics>& runs) {
  SeedSummary s;
  if (runs.empty()) return s;
  auto stats = [&](auto field, double& mean, double& sd) {
    double sum = 0.0;
    for (const auto& m : runs) sum += field(m);
    mean = sum / static_cast<double>(runs.size());
    double ss = 0.0;
    for (const auto& m : runs) ss += (field(m) - mean) * (field(m) - mean);
    sd = runs.size() > 1 ? std::sqrt(ss / static_cast<double>(runs.size() - 1)) : 0.0;
  };
  stats([](const Metrics& m) { return m.overall_accuracy; }, s.oa_mean, s.oa_std);
  stats([](const Metrics& m) { return m.average_accuracy; }, s.aa_mean, s.aa_std);
  stats([](const Metrics& m) { return m.kappa; }, s.kappa_mean, s.kappa_std);
  return s;
}

}  // namespace dualmamba
