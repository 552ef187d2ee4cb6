#include "sparseattn/coarse_attention.hpp"

#include "sparseattn/errors.hpp"

namespace sparseattn {

CoarseNet::CoarseNet(const CoarseConfig& config, Rng& rng) : config_(config) {
  const std::size_t C = config.channels, K = config.kernel;
  if (K % 2 == 0) throw ConfigError("coarse kernel size must be odd");
  if (C == 0) throw ConfigError("coarse channel count must be positive");
  conv1_weight = {"coarse.conv1.weight", fan_in_uniform({C, 1, K, K}, K * K, rng)};
  conv1_bias = {"coarse.conv1.bias", Tensor({C})};
  bn_gamma = {"coarse.bn.gamma", Tensor({C}, 1.0)};
  bn_beta = {"coarse.bn.beta", Tensor({C})};
  conv2_weight = {"coarse.conv2.weight", fan_in_uniform({1, C, K, K}, C * K * K, rng)};
  conv2_bias = {"coarse.conv2.bias", Tensor({1})};
  running = ChannelMoments{std::vector<double>(C, 0.0), std::vector<double>(C, 1.0)};
}

ParameterRefs CoarseNet::parameters() {
  return {&conv1_weight, &conv1_bias, &bn_gamma, &bn_beta, &conv2_weight, &conv2_bias};
}

ConstParameterRefs CoarseNet::parameters() const {
  return {&conv1_weight, &conv1_bias, &bn_gamma, &bn_beta, &conv2_weight, &conv2_bias};
}

void CoarseNet::absorb_batch_moments(const ChannelMoments& batch, std::size_t count) {
  const double m = config_.bn_momentum;
  const double unbias = count > 1 ? static_cast<double>(count) / static_cast<double>(count - 1) : 1.0;
  for (std::size_t c = 0; c < running.mean.size(); ++c) {
    running.mean[c] = (1.0 - m) * running.mean[c] + m * batch.mean[c];
    running.var[c] = (1.0 - m) * running.var[c] + m * batch.var[c] * unbias;
  }
}

CoarseOutput coarse_forward(const CoarseNet& net, Var images, bool training,
                            ChannelMoments* observed) {
  const Shape& s = images.shape();
  const bool batched = s.size() == 4;
  if ((s.size() != 3 && !batched) || s[batched ? 1 : 0] != 1) {
    throw DimensionError("coarse_forward: expected a single-channel image [1 x H x W] or batch "
                         "[N x 1 x H x W], got " + shape_str(s));
  }
  const std::size_t N = batched ? s[0] : 1;
  const std::size_t H = s[batched ? 2 : 1], W = s[batched ? 3 : 2];
  const std::size_t C = net.config().channels;
  const std::size_t pad = (net.config().kernel - 1) / 2;

  Tape& tape = images.tape();
  Var x = batched ? images : reshape(images, {1, 1, H, W});
  Var f1 = conv2d(x, tape.param(net.conv1_weight), tape.param(net.conv1_bias), pad);
  const bool batch_stats = training && N > 1;
  Var bn = batch_norm(f1, tape.param(net.bn_gamma), tape.param(net.bn_beta), net.config().bn_eps,
                      batch_stats ? nullptr : &net.running, batch_stats ? observed : nullptr);
  Var h = relu(bn);
  Var pooled = mean(reshape(h, {N * C, H * W}), 1);
  Var pre = conv2d(h, tape.param(net.conv2_weight), tape.param(net.conv2_bias), pad);

  CoarseOutput out;
  out.pre_sigmoid = batched ? reshape(pre, {N, H, W}) : reshape(pre, {H, W});
  out.attention_map = sigmoid(out.pre_sigmoid);
  out.z_coarse = batched ? reshape(pooled, {N, C}) : pooled;
  return out;
}

}  // namespace sparseattn
