#pragma once

#include <cstddef>
#include <span>

namespace sael {

// Confusion counts with Vulnerable (label 1) as the positive class.
// Zero denominators yield 0 for precision, recall and F1.
struct Metrics {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  std::size_t total() const noexcept { return tp + fp + fn + tn; }
  bool operator==(const Metrics&) const = default;
};

// Throws LengthMismatch / EmptyInput.
Metrics compute_metrics(std::span<const int> predictions, std::span<const int> labels);
Metrics metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn);
double f1_score(double precision, double recall);

}  // namespace sael
