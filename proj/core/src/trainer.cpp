#include "sparseattn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include <nlohmann/json.hpp>

#include "sparseattn/errors.hpp"
#include "sparseattn/optimizer.hpp"

namespace sparseattn {

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be >= 1");
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
  if (!(plateau_factor > 0.0 && plateau_factor <= 1.0)) {
    throw ConfigError("plateau factor must lie in (0, 1]");
  }
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("validation fraction must lie in (0, 1)");
  }
  loss.validate();
}

std::string epoch_json(const EpochLog& e) {
  nlohmann::ordered_json j;
  j["epoch"] = e.epoch;
  j["train_loss"] = e.train_loss;
  j["focal"] = e.focal;
  j["contrastive"] = e.contrastive;
  j["distill"] = e.distill;
  j["val_loss"] = e.val_loss;
  j["lr"] = e.learning_rate;
  j["k"] = e.k;
  j["k_percent"] = e.val_metrics.k_percent;
  j["next_k"] = e.next_k;
  j["val_accuracy"] = e.val_metrics.accuracy;
  j["val_precision"] = e.val_metrics.precision;
  j["val_recall"] = e.val_metrics.recall;
  j["val_f1"] = e.val_metrics.f1;
  j["confusion"] = e.val_metrics.confusion;
  return j.dump();
}

namespace {

struct StepLosses {
  double total = 0.0, focal = 0.0, contrastive = 0.0, distill = 0.0;
};

std::vector<std::size_t> labels_of(const Dataset& data, std::span<const std::size_t> idx) {
  std::vector<std::size_t> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(data[i].label);
  return out;
}

// --- per-model hooks used by the shared loop ---------------------------------

std::size_t class_count(const ModelState& m) { return m.config().classes; }
std::size_t class_count(const BaselineNet& m) { return m.config().classes; }

std::size_t pixel_count(const ModelState& m) { return m.config().pixel_count(); }
std::size_t pixel_count(const BaselineNet& m) { return m.config().height * m.config().width; }

std::size_t current_k(const ModelState& m) { return m.controller.k(); }
std::size_t current_k(const BaselineNet& m) { return pixel_count(m); }

std::size_t end_epoch(ModelState& m, double loss) { return m.controller.update(loss); }
std::size_t end_epoch(BaselineNet& m, double) { return current_k(m); }

StepLosses forward_loss(Tape& tape, const ModelState& m, const Tensor& images,
                        std::span<const std::size_t> labels, const LossConfig& lc, bool training,
                        ObservedMoments* observed, Var* root) {
  ForwardResult fwd = model_forward(tape, m, images, m.controller.k(), training, observed);
  BatchLossReport rep = total_loss(fwd, labels, lc);
  if (root) *root = rep.total_var;
  return {rep.total, rep.focal, rep.contrastive, rep.distill};
}

StepLosses forward_loss(Tape& tape, const BaselineNet& m, const Tensor& images,
                        std::span<const std::size_t> labels, const LossConfig& lc, bool,
                        ObservedMoments* observed, Var* root) {
  if (observed) *observed = ObservedMoments{};
  Var focal = focal_loss(baseline_forward(tape, m, images), labels, lc);
  if (root) *root = focal;
  const double f = focal.value().item();
  return {f, f, 0.0, 0.0};
}

void absorb(ModelState& m, const ObservedMoments& observed) { absorb_moments(m, observed); }
void absorb(BaselineNet&, const ObservedMoments&) {}

std::vector<std::size_t> predictions(const ModelState& m, const Tensor& images) {
  return predict_batch(m, images, m.controller.k());
}
std::vector<std::size_t> predictions(const BaselineNet& m, const Tensor& images) {
  return predict_batch(m, images);
}

template <typename Model>
MetricsReport evaluate_impl(const Model& model, const Dataset& data) {
  if (data.empty()) throw ArgumentError("evaluate: empty dataset");
  constexpr std::size_t kChunk = 64;
  std::vector<std::size_t> truth, predicted;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    std::vector<std::size_t> idx(std::min(kChunk, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const auto p = predictions(model, stack_images(data, idx));
    predicted.insert(predicted.end(), p.begin(), p.end());
    for (std::size_t i : idx) truth.push_back(data[i].label);
  }
  MetricsReport r = metrics_from_confusion(confusion_matrix(truth, predicted, class_count(model)));
  r.k = static_cast<double>(current_k(model));
  r.k_percent = 100.0 * r.k / static_cast<double>(pixel_count(model));
  return r;
}

template <typename Model>
double validation_loss_impl(const Model& model, const Dataset& data, const LossConfig& lc,
                            std::size_t batch) {
  if (data.empty()) throw ArgumentError("validation_loss: empty dataset");
  double total = 0.0;
  for (std::size_t start = 0; start < data.size(); start += batch) {
    std::vector<std::size_t> idx(std::min(batch, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    Tape tape(false);
    const auto labels = labels_of(data, idx);
    const StepLosses l =
        forward_loss(tape, model, stack_images(data, idx), labels, lc, false, nullptr, nullptr);
    total += l.total * static_cast<double>(idx.size());
  }
  return total / static_cast<double>(data.size());
}

template <typename Model>
TrainResult<Model> train_impl(Model model, const Dataset& train_set, const TrainConfig& cfg,
                              std::ostream* metrics_log) {
  cfg.validate();
  if (train_set.size() < 2) throw ArgumentError("train: need at least two training samples");
  DatasetSplit parts = split(train_set, 1.0 - cfg.validation_fraction, cfg.seed + 1);
  const Dataset& fit = parts.train;
  const Dataset& val = parts.test.empty() ? parts.train : parts.test;

  LossConfig lc = cfg.loss;
  if (lc.alpha_per_class.empty() && cfg.inverse_frequency_alpha) {
    const auto labels = [&] {
      std::vector<std::size_t> l;
      for (const LabeledImage& s : fit) l.push_back(s.label);
      return l;
    }();
    lc.alpha_per_class = inverse_frequency_weights(labels, class_count(model));
  }

  ParameterRefs params = model.parameters();
  AdamW opt(params, AdamWConfig{cfg.learning_rate, cfg.weight_decay});
  PlateauScheduler plateau(cfg.plateau_factor, cfg.plateau_patience);
  std::mt19937_64 rng(cfg.seed);

  TrainResult<Model> result{model, model, {}, false, {}};
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(fit.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Model last_good = model;
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog log;
    log.epoch = epoch;
    log.k = current_k(model);
    log.learning_rate = opt.learning_rate();
    StepLosses sums;
    try {
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t end = std::min(order.size(), start + cfg.batch_size);
        std::span<const std::size_t> idx(order.data() + start, end - start);
        const std::vector<std::size_t> batch(idx.begin(), idx.end());
        const auto labels = labels_of(fit, idx);
        Tape tape;
        ObservedMoments observed;
        Var root;
        const StepLosses l =
            forward_loss(tape, model, stack_images(fit, batch), labels, lc, true, &observed, &root);
        if (!std::isfinite(l.total)) throw NumericError("non-finite training loss");
        tape.backward(root);
        std::vector<Tensor> grads;
        grads.reserve(params.size());
        for (const Parameter* p : params) grads.push_back(tape.param_grad(*p));
        opt.step(grads);
        absorb(model, observed);
        for (const Parameter* p : params) {
          if (!p->value.all_finite()) throw NumericError("non-finite parameter " + p->name);
        }
        const double w = static_cast<double>(batch.size());
        sums.total += l.total * w;
        sums.focal += l.focal * w;
        sums.contrastive += l.contrastive * w;
        sums.distill += l.distill * w;
      }
    } catch (const NumericError& e) {
      result.model = std::move(last_good);
      result.aborted = true;
      result.abort_reason = "epoch " + std::to_string(epoch) + ": " + e.what();
      return result;
    }
    const double n = static_cast<double>(fit.size());
    log.train_loss = sums.total / n;
    log.focal = sums.focal / n;
    log.contrastive = sums.contrastive / n;
    log.distill = sums.distill / n;

    log.val_loss = validation_loss_impl(model, val, lc, cfg.batch_size);
    log.val_metrics = evaluate_impl(model, val);
    log.next_k = end_epoch(model, log.train_loss);
    opt.set_learning_rate(plateau.step(log.val_loss, opt.learning_rate()));

    if (log.val_loss < best_val) {
      best_val = log.val_loss;
      result.best = model;
    }
    if (metrics_log) *metrics_log << epoch_json(log) << '\n';
    result.log.push_back(std::move(log));
  }
  result.model = std::move(model);
  return result;
}

}  // namespace

TrainResult<ModelState> train(ModelState model, const Dataset& train_set, const TrainConfig& cfg,
                              std::ostream* metrics_log) {
  return train_impl(std::move(model), train_set, cfg, metrics_log);
}

TrainResult<BaselineNet> train(BaselineNet model, const Dataset& train_set, const TrainConfig& cfg,
                               std::ostream* metrics_log) {
  return train_impl(std::move(model), train_set, cfg, metrics_log);
}

MetricsReport evaluate(const ModelState& model, const Dataset& data) {
  return evaluate_impl(model, data);
}

MetricsReport evaluate(const BaselineNet& model, const Dataset& data) {
  return evaluate_impl(model, data);
}

double validation_loss(const ModelState& model, const Dataset& data, const TrainConfig& cfg) {
  return validation_loss_impl(model, data, cfg.loss, cfg.batch_size);
}

double validation_loss(const BaselineNet& model, const Dataset& data, const TrainConfig& cfg) {
  return validation_loss_impl(model, data, cfg.loss, cfg.batch_size);
}

double foreground_hit_rate(const ModelState& model, const Dataset& data) {
  constexpr std::size_t kChunk = 64;
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    std::vector<std::size_t> idx(std::min(kChunk, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    Tape tape(false);
    const ForwardResult fwd =
        model_forward(tape, model, stack_images(data, idx), model.controller.k(), false);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const LabeledImage& img = data[idx[b]];
      if (!img.foreground_mask) continue;
      const std::size_t W = img.pixels.dim(1);
      std::size_t hits = 0;
      for (const SparsePixel& p : fwd.selected[b]) hits += (*img.foreground_mask)[p.row * W + p.col];
      sum += static_cast<double>(hits) / static_cast<double>(fwd.selected[b].size());
      ++counted;
    }
  }
  if (counted == 0) throw ArgumentError("foreground_hit_rate: no images carry a mask");
  return sum / static_cast<double>(counted);
}

}  // namespace sparseattn
