#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

namespace dualmamba {

/// counts(i, j): reference class i predicted as j (0-based class indices).
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {}

  std::size_t classes() const { return classes_; }
  void add(std::size_t reference, std::size_t predicted, std::uint64_t n = 1);
  std::uint64_t at(std::size_t reference, std::size_t predicted) const { return counts_[reference * classes_ + predicted]; }
  std::uint64_t total() const;
  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

struct Metrics {
  double overall_accuracy = 0.0;
  double average_accuracy = 0.0;
  double kappa = 0.0;
  std::vector<std::optional<double>> per_class;  // empty optional: class absent from the reference
};

// OA = trace/total; AA over classes with reference pixels;
// kappa = (p_o - p_e) / (1 - p_e), p_e = sum_i row_i col_i / total^2 (kappa = 1 when p_e = 1).
// ConfigError on an empty matrix.
Metrics compute_metrics(const ConfusionMatrix& cm);

}  // namespace dualmamba
