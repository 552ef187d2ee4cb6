#pragma once

#include <cstddef>
#include <vector>

#include "sparseattn/parameter.hpp"

namespace sparseattn {

struct AdamWConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive-moment optimizer with decoupled weight decay: each step first
/// shrinks p by lr * wd * p, then applies the bias-corrected moment update.
class AdamW {
 public:
  AdamW(ParameterRefs params, const AdamWConfig& config);

  // One gradient per parameter, in the order given at construction.
  void step(const std::vector<Tensor>& grads);

  double learning_rate() const { return config_.learning_rate; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  std::size_t step_count() const { return steps_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }

 private:
  ParameterRefs params_;
  AdamWConfig config_;
  std::vector<Tensor> m_, v_;
  std::size_t steps_ = 0;
};

/// Multiplies the learning rate by `factor` once the monitored value has not
/// improved for `patience` consecutive epochs, then starts counting again.
class PlateauScheduler {
 public:
  PlateauScheduler(double factor = 0.9, std::size_t patience = 5)
      : factor_(factor), patience_(patience) {}

  // Returns the (possibly reduced) learning rate.
  double step(double metric, double learning_rate);
  std::size_t reductions() const { return reductions_; }

 private:
  double factor_;
  std::size_t patience_;
  bool has_best_ = false;
  double best_ = 0.0;
  std::size_t bad_epochs_ = 0;
  std::size_t reductions_ = 0;
};

}  // namespace sparseattn
