#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "sparseattn/baseline.hpp"
#include "sparseattn/data.hpp"
#include "sparseattn/losses.hpp"
#include "sparseattn/metrics.hpp"
#include "sparseattn/model.hpp"

namespace sparseattn {

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  double plateau_factor = 0.9;
  std::size_t plateau_patience = 5;
  double validation_fraction = 0.2;  // carved out of the training split
  bool inverse_frequency_alpha = true;
  std::uint64_t seed = 0;
  LossConfig loss;

  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double focal = 0.0;
  double contrastive = 0.0;
  double distill = 0.0;
  double val_loss = 0.0;
  double learning_rate = 0.0;
  std::size_t k = 0;       // budget used during the epoch
  std::size_t next_k = 0;  // budget after the controller update
  MetricsReport val_metrics;
};

// One JSON object per line.
std::string epoch_json(const EpochLog& e);

template <typename Model>
struct TrainResult {
  Model model;  // state after the last completed epoch
  Model best;   // lowest validation loss seen
  std::vector<EpochLog> log;
  bool aborted = false;
  std::string abort_reason;
};

/// Trains the sparse model. Each epoch shuffles (seeded), steps the optimizer
/// once per batch on the compound loss, feeds the epoch-mean loss to the k
/// controller, evaluates the validation split and applies the plateau
/// schedule. A non-finite loss stops training and keeps the last good state.
/// When `metrics_log` is set, one JSON line per epoch is written to it.
TrainResult<ModelState> train(ModelState model, const Dataset& train_set, const TrainConfig& cfg,
                              std::ostream* metrics_log = nullptr);

// Dense baseline: focal loss only, same optimizer/schedule/metrics.
TrainResult<BaselineNet> train(BaselineNet model, const Dataset& train_set, const TrainConfig& cfg,
                               std::ostream* metrics_log = nullptr);

/// Accuracy/precision/recall/F1 on `data` at the controller's k.
MetricsReport evaluate(const ModelState& model, const Dataset& data);
MetricsReport evaluate(const BaselineNet& model, const Dataset& data);

// Mean compound loss in inference mode (used for validation).
double validation_loss(const ModelState& model, const Dataset& data, const TrainConfig& cfg);
double validation_loss(const BaselineNet& model, const Dataset& data, const TrainConfig& cfg);

// Share of selected pixels that fall inside the foreground mask, averaged
// over images that carry a mask.
double foreground_hit_rate(const ModelState& model, const Dataset& data);

}  // namespace sparseattn
