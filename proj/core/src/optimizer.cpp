#include "sparseattn/optimizer.hpp"

#include <cmath>

#include "sparseattn/errors.hpp"

namespace sparseattn {

AdamW::AdamW(ParameterRefs params, const AdamWConfig& config)
    : params_(std::move(params)), config_(config) {
  if (!(config.learning_rate >= 0.0) || !(config.weight_decay >= 0.0)) {
    throw ConfigError("learning rate and weight decay must be >= 0");
  }
  for (const Parameter* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void AdamW::step(const std::vector<Tensor>& grads) {
  if (grads.size() != params_.size()) {
    throw ArgumentError("AdamW::step: expected " + std::to_string(params_.size()) + " gradients");
  }
  ++steps_;
  const double lr = config_.learning_rate;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i]->value;
    const Tensor& g = grads[i];
    if (g.shape() != p.shape()) {
      throw DimensionError("AdamW::step: gradient for " + params_[i]->name + " has shape " +
                           shape_str(g.shape()));
    }
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      p[j] -= lr * config_.weight_decay * p[j];
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      p[j] -= lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
  }
}

double PlateauScheduler::step(double metric, double learning_rate) {
  if (!has_best_ || metric < best_) {
    has_best_ = true;
    best_ = metric;
    bad_epochs_ = 0;
    return learning_rate;
  }
  if (++bad_epochs_ >= patience_) {
    bad_epochs_ = 0;
    ++reductions_;
    return learning_rate * factor_;
  }
  return learning_rate;
}

}  // namespace sparseattn
