#include "sparseattn/fine_attention.hpp"

#include <string>

#include "sparseattn/errors.hpp"

namespace sparseattn {

FineAttention::FineAttention(const FineConfig& config, Rng& rng) : config_(config) {
  if (config.heads == 0 || config.dim % config.heads != 0) {
    throw ConfigError("fine attention: heads (" + std::to_string(config.heads) +
                      ") must divide dim (" + std::to_string(config.dim) + ")");
  }
  if (!(config.epsilon > 0.0)) throw ConfigError("fine attention: epsilon must be positive");
  const std::size_t D = config.dim, dh = D / config.heads;
  w_v = {"fine.w_v", fan_in_uniform({D, D}, D, rng)};
  for (std::size_t h = 0; h < config.heads; ++h) {
    w_q.push_back({"fine.w_q." + std::to_string(h), fan_in_uniform({D, dh}, D, rng)});
    w_k.push_back({"fine.w_k." + std::to_string(h), fan_in_uniform({D, dh}, D, rng)});
  }
}

ParameterRefs FineAttention::parameters() {
  ParameterRefs out{&w_v};
  for (std::size_t h = 0; h < w_q.size(); ++h) {
    out.push_back(&w_q[h]);
    out.push_back(&w_k[h]);
  }
  return out;
}

ConstParameterRefs FineAttention::parameters() const {
  ConstParameterRefs out{&w_v};
  for (std::size_t h = 0; h < w_q.size(); ++h) {
    out.push_back(&w_q[h]);
    out.push_back(&w_k[h]);
  }
  return out;
}

FineOutput fine_forward(const FineAttention& fa, Var tokens) {
  const FineConfig& cfg = fa.config();
  if (cfg.heads == 0 || cfg.dim % cfg.heads != 0) {
    throw ConfigError("fine attention: heads must divide dim");
  }
  const Tensor& e = tokens.value();
  if (e.rank() != 2 || e.dim(1) != cfg.dim) {
    throw DimensionError("fine_forward: tokens must be [(k+1) x " + std::to_string(cfg.dim) +
                         "], got " + shape_str(e.shape()));
  }
  const std::size_t rows = e.dim(0);
  if (rows < 2) throw ArgumentError("fine_forward: need at least one pixel token plus CLS");
  const std::size_t cls = rows - 1;

  Tape& t = tokens.tape();
  Var v = matmul(tokens, t.param(fa.w_v));
  FineOutput out;
  Var z_sum, importance_sum;
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    Var q = matmul(tokens, t.param(fa.w_q[h]));
    Var k = matmul(tokens, t.param(fa.w_k[h]));
    Var k_pos = add_scalar(relu(k), cfg.epsilon);
    Var a = div(k_pos, broadcast_rows(sum(k_pos, 0), rows));
    Var context = matmul(transpose(a), v);  // [d_h x D]
    Var o = matmul(q, context);             // [(k+1) x D]
    Var z = row(o, cls);
    Var imp = mean(a, 1);
    z_sum = h == 0 ? z : add(z_sum, z);
    importance_sum = h == 0 ? imp : add(importance_sum, imp);
    out.head_attn.push_back(a);
  }
  const double inv_heads = 1.0 / static_cast<double>(cfg.heads);
  out.z_fine = mul_scalar(z_sum, inv_heads);
  out.pixel_importance = mul_scalar(importance_sum, inv_heads);
  return out;
}

}  // namespace sparseattn
