#pragma once

#include <vector>

#include "sparseattn/autograd.hpp"

namespace sparseattn {

struct ClassifierConfig {
  std::size_t input = 12;
  std::size_t hidden = 64;
  std::size_t classes = 3;
  std::size_t blocks = 2;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
};

/// Residual MLP head: affine -> relu, then `blocks` residual blocks of
/// affine -> batch norm -> relu -> affine added back onto their input, then
/// an affine map to class logits.
class Classifier {
 public:
  struct Block {
    Parameter w1, b1, gamma, beta, w2, b2;
    ChannelMoments running;
  };

  Classifier() = default;
  Classifier(const ClassifierConfig& config, Rng& rng);

  const ClassifierConfig& config() const { return config_; }
  ParameterRefs parameters();
  ConstParameterRefs parameters() const;

  void absorb_batch_moments(const std::vector<ChannelMoments>& batch, std::size_t count);

  Parameter in_w, in_b;
  std::vector<Block> blocks;
  Parameter out_w, out_b;

 private:
  ClassifierConfig config_;
};

/// features [B x input] -> logits [B x classes]. Batch statistics are used
/// when `batch_stats` is set (and reported via `observed`, one entry per
/// block); otherwise running statistics.
Var classifier_forward(const Classifier& clf, Var features, bool batch_stats,
                       std::vector<ChannelMoments>* observed = nullptr);

}  // namespace sparseattn
