#include "sparseattn/pixel_selector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "sparseattn/errors.hpp"

namespace sparseattn {

std::vector<SparsePixel> select_top_k(const Tensor& map, const Tensor& image, std::size_t k) {
  if (map.rank() != 2) throw DimensionError("select_top_k: map must be [H x W], got " + shape_str(map.shape()));
  if (image.shape() != map.shape()) {
    throw DimensionError("select_top_k: image " + shape_str(image.shape()) +
                         " does not match map " + shape_str(map.shape()));
  }
  const std::size_t H = map.dim(0), W = map.dim(1);
  if (k < 1 || k > H * W) {
    throw ArgumentError("select_top_k: k=" + std::to_string(k) + " outside [1, " +
                        std::to_string(H * W) + "]");
  }
  std::vector<std::size_t> order(H * W);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&map](std::size_t a, std::size_t b) {
                      if (map[a] != map[b]) return map[a] > map[b];
                      return a < b;
                    });
  const double wx = W > 1 ? static_cast<double>(W - 1) : 1.0;
  const double hy = H > 1 ? static_cast<double>(H - 1) : 1.0;
  std::vector<SparsePixel> out(k);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t idx = order[i];
    SparsePixel& p = out[i];
    p.row = idx / W;
    p.col = idx % W;
    p.x = W > 1 ? static_cast<double>(p.col) / wx : 0.0;
    p.y = H > 1 ? static_cast<double>(p.row) / hy : 0.0;
    p.v = image[idx];
    p.score = map[idx];
  }
  return out;
}

KController::KController(const KControllerConfig& config, std::size_t pixel_count)
    : config_(config) {
  if (pixel_count == 0) throw ConfigError("k controller needs a non-empty image");
  if (config.step_up < 0 || config.step_down < 0) throw ConfigError("k steps must be >= 0");
  if (!(config.beta >= 0.0 && config.beta <= 1.0) || !(config.alpha >= 0.0 && config.alpha <= 1.0)) {
    throw ConfigError("k controller beta and alpha must lie in [0, 1]");
  }
  const long pixels = static_cast<long>(pixel_count);
  k_max_ = config.k_max > 0 ? std::min(config.k_max, pixels) : pixels;
  k_min_ = std::clamp(config.k_min, 1L, k_max_);
  k_ = std::clamp(config.k_init, k_min_, k_max_);
}

std::size_t KController::update(double current_loss) {
  if (!std::isfinite(current_loss)) {
    throw NumericError("k controller received a non-finite loss");
  }
  if (!seeded_) {
    ema_ = ema_prev_ = current_loss;
    seeded_ = true;
    return k();
  }
  ema_ = config_.beta * ema_prev_ + (1.0 - config_.beta) * current_loss;
  const double trend = ema_ - ema_prev_;
  const long raw = trend >= 0.0 ? std::min(k_ + config_.step_up, k_max_)
                                : std::max(k_ - config_.step_down, k_min_);
  const double blended =
      config_.alpha * static_cast<double>(k_) + (1.0 - config_.alpha) * static_cast<double>(raw);
  k_ = std::clamp(std::lround(blended), k_min_, k_max_);
  ema_prev_ = ema_;
  return k();
}

std::vector<double> KController::state() const {
  return {static_cast<double>(k_), ema_, ema_prev_, seeded_ ? 1.0 : 0.0};
}

void KController::restore(const std::vector<double>& state) {
  if (state.size() != 4) throw DataError("k controller state must hold 4 values");
  k_ = std::clamp(std::lround(state[0]), k_min_, k_max_);
  ema_ = state[1];
  ema_prev_ = state[2];
  seeded_ = state[3] != 0.0;
}

void KController::set_history(double ema_prev) {
  ema_ = ema_prev_ = ema_prev;
  seeded_ = true;
}

}  // namespace sparseattn
