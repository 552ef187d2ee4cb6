#include "sparseattn/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "sparseattn/errors.hpp"

namespace sparseattn {

namespace {

void check_eps(double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw ArgumentError("grad_check: eps must lie in [1e-7, 1e-3]");
  }
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

double finite_probe(double value) {
  if (!std::isfinite(value)) throw NumericError("grad_check: non-finite value while probing");
  return value;
}

}  // namespace

double grad_check(const std::function<Var(Var)>& f, const Tensor& point, double eps) {
  check_eps(eps);
  Tensor analytic;
  {
    Tape tape;
    Var x = tape.variable(point);
    Var y = f(x);
    finite_probe(y.value().item());
    tape.backward(y);
    analytic = tape.grad(x);
  }
  auto eval = [&](const Tensor& at) {
    Tape tape(false);
    return finite_probe(f(tape.constant(at)).value().item());
  };
  double worst = 0.0;
  Tensor probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    probe[i] = point[i] + eps;
    const double up = eval(probe);
    probe[i] = point[i] - eps;
    const double down = eval(probe);
    probe[i] = point[i];
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * eps)));
  }
  return worst;
}

double grad_check_parameters(const std::function<Var(Tape&)>& f, const ParameterRefs& params,
                             double eps) {
  check_eps(eps);
  std::vector<Tensor> analytic;
  {
    Tape tape;
    Var y = f(tape);
    finite_probe(y.value().item());
    tape.backward(y);
    for (const Parameter* p : params) analytic.push_back(tape.param_grad(*p));
  }
  auto eval = [&] {
    Tape tape(false);
    return finite_probe(f(tape).value().item());
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double orig = p.value[i];
      p.value[i] = orig + eps;
      const double up = eval();
      p.value[i] = orig - eps;
      const double down = eval();
      p.value[i] = orig;
      worst = std::max(worst, relative_error(analytic[k][i], (up - down) / (2.0 * eps)));
    }
  }
  return worst;
}

}  // namespace sparseattn
