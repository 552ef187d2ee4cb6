#pragma once

#include <span>

#include "sparseattn/autograd.hpp"
#include "sparseattn/pixel_selector.hpp"

namespace sparseattn {

struct EmbedderConfig {
  std::size_t dim = 4;      // D
  std::size_t hidden = 16;
};

/// Shared point embedding f(x, y, v) = W2 relu(W1 [x y v] + b1) + b2 and a
/// learnable CLS token.
class Embedder {
 public:
  Embedder() = default;
  Embedder(const EmbedderConfig& config, Rng& rng);

  const EmbedderConfig& config() const { return config_; }
  ParameterRefs parameters();
  ConstParameterRefs parameters() const;

  Parameter w1, b1, w2, b2, cls_token;

 private:
  EmbedderConfig config_;
};

// [k x 3] rows of (x, y, v) in selection order.
Tensor pixel_features(std::span<const SparsePixel> pixels);

// Applies the shared MLP to every row of `points` [n x 3] -> [n x D].
Var embed_points(const Embedder& emb, Var points);

// [CLS token] appended after the embedded points: [n x D] -> [(n+1) x D].
Var append_cls(const Embedder& emb, Var embedded);

/// Embeds k >= 1 pixels and appends the CLS token as row k: [(k+1) x D].
Var embed_pixels(Tape& tape, const Embedder& emb, std::span<const SparsePixel> pixels);

}  // namespace sparseattn
