#pragma once

#include <cstddef>
#include <vector>

#include "sparseattn/tensor.hpp"

namespace sparseattn {

/// One selected pixel: normalized coordinates, intensity, and its grid cell.
struct SparsePixel {
  double x = 0.0;  // col / (W - 1)
  double y = 0.0;  // row / (H - 1)
  double v = 0.0;  // image[row, col]
  std::size_t row = 0;
  std::size_t col = 0;
  double score = 0.0;  // coarse attention value that ranked it
};

/// Returns the k pixels with the highest `map` value, ordered by descending
/// score and then ascending row-major index. `map` and `image` are [H x W].
/// Throws ArgumentError unless 1 <= k <= H*W.
std::vector<SparsePixel> select_top_k(const Tensor& map, const Tensor& image, std::size_t k);

struct KControllerConfig {
  long k_init = 8000;
  long k_min = 1500;
  long k_max = 0;  // 0 means the full image
  long step_up = 80;
  long step_down = 50;
  double beta = 0.2;   // loss EMA coefficient
  double alpha = 0.2;  // momentum on k
};

/// Loss-trend controller for the pixel budget k.
///
/// Fed one loss value per epoch. The first call only seeds the EMA; each later
/// call moves k up by step_up when the smoothed loss did not decrease and down
/// by step_down when it did, blends with the previous k by `alpha`, rounds and
/// clamps to [k_min, k_max]. Bounds larger than the image are clamped to it.
class KController {
 public:
  KController() = default;
  KController(const KControllerConfig& config, std::size_t pixel_count);

  std::size_t k() const { return static_cast<std::size_t>(k_); }
  long k_min() const { return k_min_; }
  long k_max() const { return k_max_; }
  double ema() const { return ema_; }
  double ema_prev() const { return ema_prev_; }
  bool seeded() const { return seeded_; }
  const KControllerConfig& config() const { return config_; }

  // Throws NumericError on a non-finite loss and leaves the state untouched.
  std::size_t update(double current_loss);

  // Raw state access for checkpointing: {k, ema, ema_prev, seeded}.
  std::vector<double> state() const;
  void restore(const std::vector<double>& state);
  // Directly sets EMA history (used by tests and resumed runs).
  void set_history(double ema_prev);

 private:
  KControllerConfig config_;
  long k_ = 1;
  long k_min_ = 1;
  long k_max_ = 1;
  double ema_ = 0.0;
  double ema_prev_ = 0.0;
  bool seeded_ = false;
};

}  // namespace sparseattn
