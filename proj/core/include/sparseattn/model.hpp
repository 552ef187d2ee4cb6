#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sparseattn/classifier.hpp"
#include "sparseattn/coarse_attention.hpp"
#include "sparseattn/embedding.hpp"
#include "sparseattn/fine_attention.hpp"
#include "sparseattn/pixel_selector.hpp"

namespace sparseattn {

struct ModelConfig {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t classes = 3;
  std::size_t coarse_channels = 8;
  std::size_t embed_hidden = 16;
  std::size_t dim = 4;
  std::size_t heads = 2;
  std::size_t hidden = 64;
  std::size_t blocks = 2;
  double fine_epsilon = 1e-6;
  KControllerConfig k;
  std::uint64_t seed = 0;

  std::size_t pixel_count() const { return height * width; }
  // Flat key=value form, used inside checkpoints.
  std::map<std::string, std::string> to_kv() const;
  static ModelConfig from_kv(const std::map<std::string, std::string>& kv);
};

/// Every learnable tensor of the sparse-attention classifier, plus batch-norm
/// running statistics and the pixel-budget controller.
class ModelState {
 public:
  ModelState() = default;
  explicit ModelState(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  ParameterRefs parameters();
  ConstParameterRefs parameters() const;

  CoarseNet coarse;
  Embedder embedder;
  FineAttention fine;
  Classifier classifier;
  KController controller;

 private:
  ModelConfig config_;
};

// Batch-norm moments observed during a training-mode forward pass.
struct ObservedMoments {
  bool present = false;
  ChannelMoments coarse;
  std::size_t coarse_count = 0;
  std::vector<ChannelMoments> classifier;
  std::size_t classifier_count = 0;
};

void absorb_moments(ModelState& m, const ObservedMoments& observed);

struct ForwardResult {
  Var logits;    // [B x C]
  CoarseOutput coarse;  // batched: map [B x H x W], z_coarse [B x C_coarse]
  std::vector<std::vector<SparsePixel>> selected;  // per image, k pixels
  std::vector<FineOutput> fine;                    // per image
  Var z_fine;    // [B x D]
  Var features;  // [B x (D + C_coarse)]
};

// [z_fine ; z_coarse]. Rank-1 inputs are concatenated, rank-2 inputs are
// joined per row.
Var fuse(Var z_fine, Var z_coarse);

/// Full pipeline on `images` ([H x W] or [B x H x W], values in [0,1]) with a
/// shared pixel budget k. Training mode uses batch statistics when B > 1 and
/// reports them through `observed`; the model itself is never modified.
ForwardResult model_forward(Tape& tape, const ModelState& m, const Tensor& images, std::size_t k,
                            bool training, ObservedMoments* observed = nullptr);

// Lowest index among the maximal entries.
std::size_t argmax(std::span<const double> values);

// Inference with the controller's current k.
std::size_t predict(const ModelState& m, const Tensor& image);
std::vector<std::size_t> predict_batch(const ModelState& m, const Tensor& images, std::size_t k);

// Versioned single-file checkpoint with named tensor blobs.
void write_checkpoint(std::ostream& out, const ModelState& m);
ModelState read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const ModelState& m);
ModelState load_checkpoint(const std::string& path);

// Named tensors in checkpoint order; exposed for tests and tooling.
std::vector<std::pair<std::string, Tensor>> named_tensors(const ModelState& m);

}  // namespace sparseattn
