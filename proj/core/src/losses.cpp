#include "sparseattn/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sparseattn/errors.hpp"
#include "sparseattn/model.hpp"

namespace sparseattn {

namespace {
constexpr double kProbFloor = 1e-12;
}  // namespace

void LossConfig::validate() const {
  if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
  if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
  if (!(lambda_contrast >= 0.0) || !(lambda_distill >= 0.0)) {
    throw ConfigError("loss weights must be >= 0");
  }
  if (!(emphasis > 0.0)) throw ConfigError("emphasis must be > 0");
  for (double a : alpha_per_class) {
    if (!(a > 0.0)) throw ConfigError("class weights must be > 0");
  }
}

double LossConfig::alpha(std::size_t cls) const {
  if (alpha_per_class.empty()) return 1.0;
  if (cls >= alpha_per_class.size()) {
    throw ArgumentError("no class weight for class " + std::to_string(cls));
  }
  return alpha_per_class[cls];
}

std::vector<double> inverse_frequency_weights(std::span<const std::size_t> labels,
                                              std::size_t classes) {
  std::vector<double> counts(classes, 0.0);
  for (std::size_t y : labels) {
    if (y >= classes) throw ArgumentError("label " + std::to_string(y) + " out of range");
    counts[y] += 1.0;
  }
  std::vector<double> w(classes, 1.0);
  double total = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    if (counts[c] > 0.0) {
      w[c] = 1.0 / counts[c];
      total += w[c];
      ++present;
    }
  }
  if (present == 0) return w;
  const double scale = static_cast<double>(present) / total;
  for (std::size_t c = 0; c < classes; ++c) {
    if (counts[c] > 0.0) w[c] *= scale;
  }
  return w;
}

Var focal_loss(Var logits, std::span<const std::size_t> labels, const LossConfig& cfg) {
  const Tensor& lv = logits.value();
  if (lv.rank() != 2 || lv.dim(0) != labels.size()) {
    throw DimensionError("focal_loss: logits " + shape_str(lv.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t B = lv.dim(0), C = lv.dim(1);
  if (B == 0) throw ArgumentError("focal_loss: empty batch");
  std::vector<std::size_t> idx(B);
  Tensor weights({B});
  for (std::size_t i = 0; i < B; ++i) {
    if (labels[i] >= C) {
      throw ArgumentError("focal_loss: label " + std::to_string(labels[i]) + " outside [0," +
                          std::to_string(C) + ")");
    }
    idx[i] = i * C + labels[i];
    weights[i] = cfg.alpha(labels[i]);
  }
  Tape& t = logits.tape();
  Var log_p = clamp_min(gather(log_softmax(logits), idx), std::log(kProbFloor));
  Var p = exp(log_p);
  Var modulator = pow_scalar(add_scalar(neg(p), 1.0), cfg.gamma);
  Var per_sample = mul(mul(t.constant(std::move(weights)), modulator), neg(log_p));
  return mean(per_sample);
}

Var contrastive_loss(Var embeddings, std::span<const std::size_t> labels, const LossConfig& cfg) {
  const Tensor& ev = embeddings.value();
  if (ev.rank() != 2 || ev.dim(0) != labels.size()) {
    throw DimensionError("contrastive_loss: embeddings " + shape_str(ev.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t B = ev.dim(0);
  Tape& t = embeddings.tape();
  if (B < 2) return t.constant(Tensor::scalar(0.0));
  Var z = normalize_rows(embeddings, 1e-12);
  Var sims = mul_scalar(matmul(z, transpose(z)), 1.0 / cfg.tau);  // [B x B]

  std::vector<Var> terms;
  for (std::size_t i = 0; i < B; ++i) {
    std::size_t positive = B;
    for (std::size_t j = B; j-- > 0;) {
      if (j != i && labels[j] == labels[i]) {
        positive = j;
        break;
      }
    }
    if (positive == B) continue;
    // Log-softmax over the row without the self entry; the positive sits at
    // its position among the remaining indices.
    std::vector<std::size_t> others;
    std::size_t pos_slot = 0;
    for (std::size_t j = 0; j < B; ++j) {
      if (j == i) continue;
      if (j == positive) pos_slot = others.size();
      others.push_back(i * B + j);
    }
    Var log_probs = log_softmax(gather(sims, others));
    const std::size_t slot[] = {pos_slot};
    terms.push_back(gather(log_probs, slot));
  }
  if (terms.empty()) return t.constant(Tensor::scalar(0.0));
  return neg(mean(concat(terms)));
}

Var distill_loss(Var coarse_map, Var pixel_importance, std::span<const SparsePixel> selected,
                 const LossConfig& cfg) {
  const std::size_t k = selected.size();
  if (k == 0) throw ArgumentError("distill_loss: no selected pixels");
  const Tensor& map = coarse_map.value();
  if (map.rank() != 2) {
    throw DimensionError("distill_loss: coarse map must be [H x W], got " + shape_str(map.shape()));
  }
  const Tensor& imp = pixel_importance.value();
  if (imp.rank() != 1 || imp.size() != k + 1) {
    throw DimensionError("distill_loss: importance " + shape_str(imp.shape()) +
                         " does not match " + std::to_string(k) + " pixels plus CLS");
  }
  const std::size_t W = map.dim(1);
  std::vector<std::size_t> flat(k);
  for (std::size_t i = 0; i < k; ++i) flat[i] = selected[i].row * W + selected[i].col;

  // Teacher: fixed values, no tape edge back into the fine attention.
  Tensor target({k});
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    target[i] = std::pow(imp[i], cfg.emphasis);
    total += target[i];
  }
  Tensor log_target({k});
  for (std::size_t i = 0; i < k; ++i) {
    const double p = total > 0.0 ? target[i] / total : 1.0 / static_cast<double>(k);
    log_target[i] = std::log(std::max(p, kProbFloor));
  }

  Tape& t = coarse_map.tape();
  Var log_pc = log_softmax(gather(coarse_map, flat));
  Var pc = exp(log_pc);
  return sum(mul(pc, sub(log_pc, t.constant(std::move(log_target)))));
}

BatchLossReport total_loss(const ForwardResult& fwd, std::span<const std::size_t> labels,
                           const LossConfig& cfg) {
  Var focal = focal_loss(fwd.logits, labels, cfg);
  Var contrast = contrastive_loss(fwd.z_fine, labels, cfg);

  const Shape& ms = fwd.coarse.attention_map.shape();
  const std::size_t B = fwd.selected.size();
  Var distill;
  if (ms.size() == 2) {
    distill = distill_loss(fwd.coarse.attention_map, fwd.fine.at(0).pixel_importance,
                           fwd.selected.at(0), cfg);
  } else {
    const std::size_t H = ms[1], W = ms[2];
    Var flat = reshape(fwd.coarse.attention_map, {B, H * W});
    std::vector<Var> per_image;
    for (std::size_t b = 0; b < B; ++b) {
      Var map_b = reshape(row(flat, b), {H, W});
      per_image.push_back(
          reshape(distill_loss(map_b, fwd.fine[b].pixel_importance, fwd.selected[b], cfg), {1}));
    }
    distill = mean(concat(per_image));
  }

  BatchLossReport r;
  r.total_var = add(add(focal, mul_scalar(contrast, cfg.lambda_contrast)),
                    mul_scalar(distill, cfg.lambda_distill));
  r.focal = focal.value().item();
  r.contrastive = contrast.value().item();
  r.distill = distill.value().item();
  r.total = r.total_var.value().item();

  const Tensor& lv = fwd.logits.value();
  const std::size_t C = lv.dim(1);
  for (std::size_t i = 0; i < lv.dim(0); ++i) {
    const double* row_ptr = lv.data().data() + i * C;
    const double m = *std::max_element(row_ptr, row_ptr + C);
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += std::exp(row_ptr[c] - m);
    r.p_true.push_back(std::exp(row_ptr[labels[i]] - m) / s);
  }
  return r;
}

}  // namespace sparseattn
