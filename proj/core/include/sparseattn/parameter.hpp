#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "sparseattn/tensor.hpp"

namespace sparseattn {

using Rng = std::mt19937_64;

/// A named learnable tensor. Gradients are not stored here; they are read
/// back from the Tape that recorded the forward pass.
struct Parameter {
  std::string name;
  Tensor value;
};

// Uniform in +-sqrt(1/fan_in).
Tensor fan_in_uniform(const Shape& shape, std::size_t fan_in, Rng& rng);

// Non-owning views used by the optimizer and the checkpoint writer.
using ParameterRefs = std::vector<Parameter*>;
using ConstParameterRefs = std::vector<const Parameter*>;

std::size_t parameter_count(const ConstParameterRefs& params);

}  // namespace sparseattn
