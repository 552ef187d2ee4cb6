#pragma once

#include <iosfwd>
#include <map>
#include <string>

#include "sparseattn/autograd.hpp"

namespace sparseattn {

struct BaselineConfig {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t classes = 3;
  std::size_t channels1 = 16;
  std::size_t channels2 = 32;
  std::uint64_t seed = 0;

  std::map<std::string, std::string> to_kv() const;
  static BaselineConfig from_kv(const std::map<std::string, std::string>& kv);
};

/// Dense comparison CNN: two blocks of 3x3 conv -> relu -> 2x2 average pool
/// (1 -> 16 -> 32 channels) on the full image, then an affine head.
class BaselineNet {
 public:
  BaselineNet() = default;
  explicit BaselineNet(const BaselineConfig& config);

  const BaselineConfig& config() const { return config_; }
  ParameterRefs parameters();
  ConstParameterRefs parameters() const;

  Parameter conv1_weight, conv1_bias, conv2_weight, conv2_bias, head_weight, head_bias;

 private:
  BaselineConfig config_;
};

// images [H x W] or [B x H x W] -> logits [B x C].
Var baseline_forward(Tape& tape, const BaselineNet& net, const Tensor& images);

std::vector<std::size_t> predict_batch(const BaselineNet& net, const Tensor& images);

void write_checkpoint(std::ostream& out, const BaselineNet& net);
BaselineNet read_baseline_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const BaselineNet& net);
BaselineNet load_baseline_checkpoint(const std::string& path);

// Reads only the kind string of a checkpoint file ("sparseattn" or "baseline").
std::string checkpoint_kind(const std::string& path);

}  // namespace sparseattn
