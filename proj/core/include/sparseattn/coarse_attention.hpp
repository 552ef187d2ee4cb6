#pragma once

#include <cstddef>

#include "sparseattn/autograd.hpp"

namespace sparseattn {

struct CoarseConfig {
  std::size_t channels = 8;  // intermediate width, also the length of z_coarse
  std::size_t kernel = 3;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
};

/// Two-layer convolutional saliency front-end: conv(1->C) -> batch norm ->
/// relu -> conv(C->1), both with same-padding.
class CoarseNet {
 public:
  CoarseNet() = default;
  CoarseNet(const CoarseConfig& config, Rng& rng);

  const CoarseConfig& config() const { return config_; }
  ParameterRefs parameters();
  ConstParameterRefs parameters() const;

  // Folds one batch's moments into the running statistics. `count` is the
  // number of values each channel's moments were computed over.
  void absorb_batch_moments(const ChannelMoments& batch, std::size_t count);

  Parameter conv1_weight, conv1_bias;
  Parameter bn_gamma, bn_beta;
  Parameter conv2_weight, conv2_bias;
  ChannelMoments running;

 private:
  CoarseConfig config_;
};

struct CoarseOutput {
  Var attention_map;  // [H x W] or [N x H x W], strictly inside (0,1)
  Var z_coarse;       // [C] or [N x C], global average of the post-relu map
  Var pre_sigmoid;    // same shape as attention_map
};

/// Runs the coarse network on [1 x H x W] or [N x 1 x H x W] images.
///
/// In training mode with N > 1 batch norm uses batch moments, which are
/// reported through `observed`; otherwise (inference, or a single image) it
/// uses the running statistics.
CoarseOutput coarse_forward(const CoarseNet& net, Var images, bool training,
                            ChannelMoments* observed = nullptr);

}  // namespace sparseattn
