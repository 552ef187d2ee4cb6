#pragma once

#include <vector>

#include "sparseattn/autograd.hpp"

namespace sparseattn {

struct FineConfig {
  std::size_t dim = 4;    // D
  std::size_t heads = 2;  // must divide D
  double epsilon = 1e-6;
};

/// Multi-head attention over pixel tokens with ReLU keys normalized per
/// feature column across tokens (no softmax). The value projection is shared
/// by all heads; each head owns its query and key projections.
class FineAttention {
 public:
  FineAttention() = default;
  FineAttention(const FineConfig& config, Rng& rng);

  const FineConfig& config() const { return config_; }
  std::size_t head_dim() const { return config_.dim / config_.heads; }
  ParameterRefs parameters();
  ConstParameterRefs parameters() const;

  Parameter w_v;                  // [D x D]
  std::vector<Parameter> w_q;     // per head [D x d_h]
  std::vector<Parameter> w_k;     // per head [D x d_h]

 private:
  FineConfig config_;
};

struct FineOutput {
  Var z_fine;                 // [D], head mean of the CLS output row
  std::vector<Var> head_attn; // per head A_h, [(k+1) x d_h], columns sum to 1
  Var pixel_importance;       // [k+1], A_h row means averaged over heads
};

/// `tokens` is [(k+1) x D] with the CLS token in the last row.
FineOutput fine_forward(const FineAttention& fa, Var tokens);

}  // namespace sparseattn
