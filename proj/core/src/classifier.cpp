#include "sparseattn/classifier.hpp"

#include <string>

#include "sparseattn/errors.hpp"

namespace sparseattn {

Classifier::Classifier(const ClassifierConfig& config, Rng& rng) : config_(config) {
  if (config.input == 0 || config.hidden == 0 || config.classes == 0) {
    throw ConfigError("classifier widths must be positive");
  }
  const std::size_t F = config.input, Hd = config.hidden, C = config.classes;
  in_w = {"classifier.in.w", fan_in_uniform({F, Hd}, F, rng)};
  in_b = {"classifier.in.b", Tensor({Hd})};
  for (std::size_t i = 0; i < config.blocks; ++i) {
    const std::string p = "classifier.block" + std::to_string(i) + ".";
    Block b;
    b.w1 = {p + "w1", fan_in_uniform({Hd, Hd}, Hd, rng)};
    b.b1 = {p + "b1", Tensor({Hd})};
    b.gamma = {p + "bn.gamma", Tensor({Hd}, 1.0)};
    b.beta = {p + "bn.beta", Tensor({Hd})};
    b.w2 = {p + "w2", fan_in_uniform({Hd, Hd}, Hd, rng)};
    b.b2 = {p + "b2", Tensor({Hd})};
    b.running = ChannelMoments{std::vector<double>(Hd, 0.0), std::vector<double>(Hd, 1.0)};
    blocks.push_back(std::move(b));
  }
  out_w = {"classifier.out.w", fan_in_uniform({Hd, C}, Hd, rng)};
  out_b = {"classifier.out.b", Tensor({C})};
}

ParameterRefs Classifier::parameters() {
  ParameterRefs out{&in_w, &in_b};
  for (Block& b : blocks) {
    for (Parameter* p : {&b.w1, &b.b1, &b.gamma, &b.beta, &b.w2, &b.b2}) out.push_back(p);
  }
  out.push_back(&out_w);
  out.push_back(&out_b);
  return out;
}

ConstParameterRefs Classifier::parameters() const {
  ConstParameterRefs out{&in_w, &in_b};
  for (const Block& b : blocks) {
    for (const Parameter* p : {&b.w1, &b.b1, &b.gamma, &b.beta, &b.w2, &b.b2}) out.push_back(p);
  }
  out.push_back(&out_w);
  out.push_back(&out_b);
  return out;
}

void Classifier::absorb_batch_moments(const std::vector<ChannelMoments>& batch,
                                      std::size_t count) {
  const double m = config_.bn_momentum;
  const double unbias = count > 1 ? static_cast<double>(count) / static_cast<double>(count - 1) : 1.0;
  for (std::size_t i = 0; i < blocks.size() && i < batch.size(); ++i) {
    ChannelMoments& r = blocks[i].running;
    for (std::size_t c = 0; c < r.mean.size(); ++c) {
      r.mean[c] = (1.0 - m) * r.mean[c] + m * batch[i].mean[c];
      r.var[c] = (1.0 - m) * r.var[c] + m * batch[i].var[c] * unbias;
    }
  }
}

Var classifier_forward(const Classifier& clf, Var features, bool batch_stats,
                       std::vector<ChannelMoments>* observed) {
  const Tensor& f = features.value();
  if (f.rank() != 2 || f.dim(1) != clf.config().input) {
    throw DimensionError("classifier: expected [B x " + std::to_string(clf.config().input) +
                         "] features, got " + shape_str(f.shape()));
  }
  Tape& t = features.tape();
  if (observed) observed->clear();
  Var h = relu(affine(features, t.param(clf.in_w), t.param(clf.in_b)));
  for (const Classifier::Block& b : clf.blocks) {
    ChannelMoments moments;
    Var u = affine(h, t.param(b.w1), t.param(b.b1));
    u = batch_norm(u, t.param(b.gamma), t.param(b.beta), clf.config().bn_eps,
                   batch_stats ? nullptr : &b.running, batch_stats ? &moments : nullptr);
    u = affine(relu(u), t.param(b.w2), t.param(b.b2));
    h = add(h, u);
    if (observed && batch_stats) observed->push_back(std::move(moments));
  }
  return affine(h, t.param(clf.out_w), t.param(clf.out_b));
}

}  // namespace sparseattn
