#pragma once

#include <functional>

#include "sparseattn/autograd.hpp"

namespace sparseattn {

/// Compares tape gradients with central finite differences.
///
/// Each coordinate's relative error is |analytic - numeric| divided by
/// max(|analytic|, |numeric|, 1e-8); the worst one is returned. `f` must be
/// deterministic and return a single-element Var on the tape of its argument.
/// eps must lie in [1e-7, 1e-3]. Throws NumericError if a probe is non-finite.
double grad_check(const std::function<Var(Var)>& f, const Tensor& point, double eps = 1e-5);

// Same check over every coordinate of every listed parameter. `f` builds the
// scalar from scratch on the given tape (registering parameters through
// Tape::param). Parameter values are restored before returning.
double grad_check_parameters(const std::function<Var(Tape&)>& f, const ParameterRefs& params,
                             double eps = 1e-5);

}  // namespace sparseattn
