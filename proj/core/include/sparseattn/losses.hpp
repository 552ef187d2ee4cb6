#pragma once

#include <span>
#include <vector>

#include "sparseattn/autograd.hpp"
#include "sparseattn/pixel_selector.hpp"

namespace sparseattn {

struct ForwardResult;

struct LossConfig {
  double gamma = 2.0;
  std::vector<double> alpha_per_class;  // empty means 1 for every class
  double lambda_contrast = 0.1;
  double lambda_distill = 0.02;
  double tau = 0.07;
  double emphasis = 2.0;

  void validate() const;
  double alpha(std::size_t cls) const;
};

// Inverse class frequency, rescaled so the weights average to 1 over classes
// that occur. Absent classes get weight 1.
std::vector<double> inverse_frequency_weights(std::span<const std::size_t> labels,
                                              std::size_t classes);

/// Mean over the batch of alpha_y (1 - p_y)^gamma (-log p_y), p = softmax.
/// p_y is floored at 1e-12 before the log.
Var focal_loss(Var logits, std::span<const std::size_t> labels, const LossConfig& cfg);

/// Supervised contrastive loss on L2-normalized rows of `embeddings`.
/// Each anchor's positive is the highest-index other sample of its class; the
/// denominator runs over all other samples. Anchors without a positive are
/// skipped; with no valid anchor the loss is 0.
Var contrastive_loss(Var embeddings, std::span<const std::size_t> labels, const LossConfig& cfg);

/// KL(P_coarse || P_fine) restricted to the selected pixels. `pixel_importance`
/// holds k + 1 entries; the trailing CLS entry is ignored.
///
/// P_coarse is the softmax of the coarse map [H x W] at the selected cells.
/// P_fine is importance[0..k)^emphasis normalized, floored at 1e-12, and
/// detached, so gradient only ever reaches the coarse side.
Var distill_loss(Var coarse_map, Var pixel_importance, std::span<const SparsePixel> selected,
                 const LossConfig& cfg);

struct BatchLossReport {
  double focal = 0.0;
  double contrastive = 0.0;
  double distill = 0.0;
  double total = 0.0;
  std::vector<double> p_true;  // per-sample probability of the true class
  Var total_var;               // differentiable total
};

/// focal + lambda_contrast * contrastive + lambda_distill * distill for one
/// batch of model outputs. Distillation is averaged over the batch's images.
BatchLossReport total_loss(const ForwardResult& fwd, std::span<const std::size_t> labels,
                           const LossConfig& cfg);

}  // namespace sparseattn
