#include "sparseattn/metrics.hpp"

#include <cstdio>
#include <string>

#include <nlohmann/json.hpp>

#include "sparseattn/errors.hpp"

namespace sparseattn {

std::size_t MetricsReport::total() const {
  std::size_t n = 0;
  for (std::size_t s : support) n += s;
  return n;
}

ConfusionMatrix confusion_matrix(std::span<const std::size_t> truth,
                                 std::span<const std::size_t> predicted, std::size_t classes) {
  if (truth.size() != predicted.size()) throw ArgumentError("confusion_matrix: length mismatch");
  ConfusionMatrix cm(classes, std::vector<std::size_t>(classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= classes || predicted[i] >= classes) {
      throw ArgumentError("confusion_matrix: class index out of range");
    }
    ++cm[truth[i]][predicted[i]];
  }
  return cm;
}

MetricsReport metrics_from_confusion(const ConfusionMatrix& cm) {
  const std::size_t C = cm.size();
  MetricsReport r;
  r.confusion = cm;
  r.support.assign(C, 0);
  std::vector<std::size_t> predicted(C, 0);
  std::size_t total = 0, correct = 0;
  for (std::size_t t = 0; t < C; ++t) {
    if (cm[t].size() != C) throw DimensionError("confusion matrix must be square");
    for (std::size_t p = 0; p < C; ++p) {
      r.support[t] += cm[t][p];
      predicted[p] += cm[t][p];
      total += cm[t][p];
    }
    correct += cm[t][t];
  }
  if (total == 0) throw ArgumentError("metrics of an empty evaluation");
  const double n = static_cast<double>(total);
  r.accuracy = static_cast<double>(correct) / n;
  for (std::size_t c = 0; c < C; ++c) {
    if (r.support[c] == 0) continue;
    const double tp = static_cast<double>(cm[c][c]);
    const double prec = predicted[c] ? tp / static_cast<double>(predicted[c]) : 0.0;
    const double rec = tp / static_cast<double>(r.support[c]);
    const double f1 = prec + rec > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    const double w = static_cast<double>(r.support[c]) / n;
    r.precision += w * prec;
    r.recall += w * rec;
    r.f1 += w * f1;
  }
  return r;
}

std::string metrics_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["accuracy"] = r.accuracy;
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["f1"] = r.f1;
  j["k"] = r.k;
  j["k_percent"] = r.k_percent;
  j["support"] = r.support;
  j["confusion"] = r.confusion;
  return j.dump();
}

std::string format_metrics(const MetricsReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "accuracy %.4f  precision %.4f  recall %.4f  f1 %.4f  k %.0f (%.1f%% image)\n",
                r.accuracy, r.precision, r.recall, r.f1, r.k, r.k_percent);
  std::string s = buf;
  s += "confusion [true][pred]:\n";
  for (const auto& row : r.confusion) {
    s += " ";
    for (std::size_t c : row) s += " " + std::to_string(c);
    s += "\n";
  }
  return s;
}

}  // namespace sparseattn
