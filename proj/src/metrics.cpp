#include "dualmamba/metrics.hpp"

#include <string>

#include "dualmamba/error.hpp"

namespace dualmamba {

void ConfusionMatrix::add(std::size_t reference, std::size_t predicted, std::uint64_t n) {
  if (reference >= classes_ || predicted >= classes_) {
    throw ShapeError("confusion matrix: class pair (" + std::to_string(reference) + "," + std::to_string(predicted) +
                     ") outside " + std::to_string(classes_) + " classes");
  }
  counts_[reference * classes_ + predicted] += n;
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t n = 0;
  for (auto c : counts_) n += c;
  return n;
}

Metrics compute_metrics(const ConfusionMatrix& cm) {
  const std::size_t K = cm.classes();
  const std::uint64_t total = cm.total();
  if (total == 0) throw ConfigError("metrics: confusion matrix is empty");

  std::vector<std::uint64_t> row(K, 0), col(K, 0);
  std::uint64_t diag = 0;
  for (std::size_t i = 0; i < K; ++i) {
    for (std::size_t j = 0; j < K; ++j) {
      row[i] += cm.at(i, j);
      col[j] += cm.at(i, j);
    }
    diag += cm.at(i, i);
  }

  Metrics m;
  const double n = static_cast<double>(total);
  m.overall_accuracy = static_cast<double>(diag) / n;
  double acc_sum = 0.0;
  std::size_t present = 0;
  m.per_class.resize(K);
  double chance = 0.0;
  for (std::size_t i = 0; i < K; ++i) {
    chance += static_cast<double>(row[i]) * static_cast<double>(col[i]);
    if (row[i] == 0) continue;
    const double acc = static_cast<double>(cm.at(i, i)) / static_cast<double>(row[i]);
    m.per_class[i] = acc;
    acc_sum += acc;
    ++present;
  }
  m.average_accuracy = acc_sum / static_cast<double>(present);
  // Integer-valued numerator and denominator (exact below 2^53), one rounding.
  const double agree = n * static_cast<double>(diag) - chance, spread = n * n - chance;
  m.kappa = spread > 0.0 ? agree / spread : 1.0;
  return m;
}

}  // namespace dualmamba
