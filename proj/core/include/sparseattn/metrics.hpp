#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace sparseattn {

using ConfusionMatrix = std::vector<std::vector<std::size_t>>;  // [true][predicted]

/// Accuracy plus support-weighted precision, recall and F1.
struct MetricsReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  ConfusionMatrix confusion;
  std::vector<std::size_t> support;
  double k = 0.0;          // pixel budget in effect
  double k_percent = 0.0;  // 100 k / (H W)
  std::size_t total() const;
};

ConfusionMatrix confusion_matrix(std::span<const std::size_t> truth,
                                 std::span<const std::size_t> predicted, std::size_t classes);
MetricsReport metrics_from_confusion(const ConfusionMatrix& confusion);

// One-line JSON object and a short text summary.
std::string metrics_json(const MetricsReport& r);
std::string format_metrics(const MetricsReport& r);

}  // namespace sparseattn
