#include "sparseattn/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "sparseattn/errors.hpp"

namespace sparseattn {

// ---------------------------------------------------------------------------
// Var / Tape
// ---------------------------------------------------------------------------

const Tensor& Var::value() const { return tape_->nodes_[id_].value; }

bool Var::requires_grad() const { return tape_->nodes_[id_].requires_grad; }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), std::nullopt, nullptr, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), std::nullopt, nullptr, record_});
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(const Parameter& p) {
  Var v = variable(p.value);
  param_nodes_[&p].push_back(v.id_);
  return v;
}

void Tape::check_owned(Var v) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) {
    throw ArgumentError("variable does not belong to this tape");
  }
}

Var Tape::push(Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
  return push(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
              std::move(fn));
}

Var Tape::push(Tensor value, std::span<const Var> parents, BackwardFn fn) {
  bool req = false;
  for (const Var& p : parents) {
    check_owned(p);
    req = req || nodes_[p.id_].requires_grad;
  }
  req = req && record_;
  nodes_.push_back(Node{std::move(value), std::nullopt, req ? std::move(fn) : nullptr, req});
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(Var v, const Tensor& g) {
  Node& node = nodes_[v.id_];
  if (!node.requires_grad) return;
  if (g.shape() != node.value.shape()) {
    throw DimensionError("gradient shape " + shape_str(g.shape()) + " does not match value " +
                         shape_str(node.value.shape()));
  }
  if (!node.grad) {
    node.grad = g;
    return;
  }
  auto dst = node.grad->data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void Tape::backward(Var root) {
  check_owned(root);
  if (!record_) throw ArgumentError("backward() on a non-recording tape");
  if (backward_done_) throw ArgumentError("tape already consumed by backward()");
  backward_done_ = true;
  if (root.value().size() != 1) {
    throw DimensionError("backward root must hold one value, got " + shape_str(root.shape()));
  }
  if (!nodes_[root.id_].requires_grad) return;
  nodes_[root.id_].grad = Tensor(root.shape(), 1.0);

  for (std::size_t i = root.id_ + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.grad) continue;
    if (!node.value.all_finite()) {
      throw NumericError("non-finite value in tape node " + std::to_string(i));
    }
    if (!node.grad->all_finite()) {
      throw NumericError("non-finite gradient in tape node " + std::to_string(i));
    }
    if (node.backward) node.backward(*this, *node.grad);
  }
}

Tensor Tape::grad(Var v) const {
  check_owned(v);
  const Node& node = nodes_[v.id_];
  return node.grad ? *node.grad : Tensor(node.value.shape());
}

Tensor Tape::param_grad(const Parameter& p) const {
  Tensor out(p.value.shape());
  auto it = param_nodes_.find(&p);
  if (it == param_nodes_.end()) return out;
  for (std::size_t id : it->second) {
    const Node& node = nodes_[id];
    if (!node.grad) continue;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += (*node.grad)[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// helpers
// ---------------------------------------------------------------------------

namespace {

void same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw ArgumentError("operands recorded on different tapes");
}

void require_rank(Var a, std::size_t rank, const char* op) {
  if (a.value().rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(a.shape()));
  }
}

enum class Broadcast { kNone, kLeftScalar, kRightScalar };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kNone;
  if (a.size() == 1) return Broadcast::kLeftScalar;
  if (b.size() == 1) return Broadcast::kRightScalar;
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                       " and " + shape_str(b.shape()));
}

// Sum `g` down to a single-element tensor of `shape` when that operand was
// broadcast, otherwise pass through.
Tensor reduce_to(const Tensor& g, const Shape& shape) {
  if (g.shape() == shape) return g;
  double s = 0.0;
  for (double v : g.data()) s += v;
  return Tensor(shape, s);
}

template <typename F, typename DA, typename DB>
Var binary(Var a, Var b, const char* op, F f, DA da, DB db) {
  same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast kind = broadcast_kind(av, bv, op);
  const Shape out_shape = kind == Broadcast::kLeftScalar ? bv.shape() : av.shape();
  const std::size_t n = shape_numel(out_shape);
  auto lhs = [&, kind](std::size_t i) { return kind == Broadcast::kLeftScalar ? av[0] : av[i]; };
  auto rhs = [&, kind](std::size_t i) { return kind == Broadcast::kRightScalar ? bv[0] : bv[i]; };
  Tensor out(out_shape);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(lhs(i), rhs(i));

  return a.tape().push(std::move(out), {a, b}, [a, b, kind, da, db](Tape& t, const Tensor& g) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    auto lhs = [&](std::size_t i) { return kind == Broadcast::kLeftScalar ? av[0] : av[i]; };
    auto rhs = [&](std::size_t i) { return kind == Broadcast::kRightScalar ? bv[0] : bv[i]; };
    if (t.needs_grad(a)) {
      Tensor ga(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * da(lhs(i), rhs(i));
      t.accumulate(a, reduce_to(ga, av.shape()));
    }
    if (t.needs_grad(b)) {
      Tensor gb(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] = g[i] * db(lhs(i), rhs(i));
      t.accumulate(b, reduce_to(gb, bv.shape()));
    }
  });
}

// Unary op with derivative expressed in terms of the input.
template <typename F, typename D>
Var unary(Var a, F f, D d) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return a.tape().push(std::move(out), {a}, [a, d](Tape& t, const Tensor& g) {
    const Tensor& av = a.value();
    Tensor ga(av.shape());
    for (std::size_t i = 0; i < av.size(); ++i) ga[i] = g[i] * d(av[i]);
    t.accumulate(a, ga);
  });
}

double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
  Shape reduced;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  s.reduced = shape;
  s.reduced.erase(s.reduced.begin() + static_cast<std::ptrdiff_t>(axis));
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(av.shape()) + " and " +
                         shape_str(bv.shape()));
  }
  const std::size_t m = av.dim(0), n = av.dim(1), p = bv.dim(1);
  Tensor out({m, p});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      const double aik = av[i * n + k];
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < p; ++j) out[i * p + j] += aik * bv[k * p + j];
    }
  }
  return a.tape().push(std::move(out), {a, b}, [a, b, m, n, p](Tape& t, const Tensor& g) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (t.needs_grad(a)) {
      // dA = G B^T
      Tensor ga({m, n});
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t k = 0; k < n; ++k) {
          double s = 0.0;
          for (std::size_t j = 0; j < p; ++j) s += g[i * p + j] * bv[k * p + j];
          ga[i * n + k] = s;
        }
      }
      t.accumulate(a, ga);
    }
    if (t.needs_grad(b)) {
      // dB = A^T G
      Tensor gb({n, p});
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t k = 0; k < n; ++k) {
          const double aik = av[i * n + k];
          if (aik == 0.0) continue;
          for (std::size_t j = 0; j < p; ++j) gb[k * p + j] += aik * g[i * p + j];
        }
      }
      t.accumulate(b, gb);
    }
  });
}

Var transpose(Var a) {
  require_rank(a, 2, "transpose");
  const Tensor& av = a.value();
  const std::size_t m = av.dim(0), n = av.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  return a.tape().push(std::move(out), {a}, [a, m, n](Tape& t, const Tensor& g) {
    Tensor ga({m, n});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] = g[j * m + i];
    t.accumulate(a, ga);
  });
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

Var add(Var a, Var b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var div(Var a, Var b) {
  for (double v : b.value().data()) {
    if (v == 0.0) throw DomainError("div: division by zero");
  }
  return binary(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

Var add_scalar(Var a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double) { return 1.0; });
}

Var mul_scalar(Var a, double s) {
  return unary(a, [s](double x) { return x * s; }, [s](double) { return s; });
}

Var neg(Var a) { return mul_scalar(a, -1.0); }

Var relu(Var a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
  return unary(a, sigmoid_value, [](double x) {
    const double s = sigmoid_value(x);
    return s * (1.0 - s);
  });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Var log(Var a) {
  for (double v : a.value().data()) {
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
  }
  return unary(a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Var pow_scalar(Var a, double exponent) {
  if (exponent != std::floor(exponent)) {
    for (double v : a.value().data()) {
      if (v < 0.0) throw DomainError("pow of negative value with non-integer exponent");
    }
  }
  return unary(
      a, [exponent](double x) { return std::pow(x, exponent); },
      [exponent](double x) {
        if (exponent == 0.0) return 0.0;
        if (x == 0.0) return exponent == 1.0 ? 1.0 : 0.0;
        return exponent * std::pow(x, exponent - 1.0);
      });
}

Var clamp_min(Var a, double lo) {
  return unary(
      a, [lo](double x) { return x < lo ? lo : x; }, [lo](double x) { return x < lo ? 0.0 : 1.0; });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Var sum(Var a, std::optional<std::size_t> axis) {
  const Tensor& av = a.value();
  if (!axis) {
    double s = 0.0;
    for (double v : av.data()) s += v;
    return a.tape().push(Tensor::scalar(s), {a}, [a](Tape& t, const Tensor& g) {
      t.accumulate(a, Tensor(a.shape(), g[0]));
    });
  }
  const AxisSplit sp = split_axis(av.shape(), *axis, "sum");
  Tensor out(sp.reduced);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t e = 0; e < sp.extent; ++e)
      for (std::size_t i = 0; i < sp.inner; ++i)
        out[o * sp.inner + i] += av[(o * sp.extent + e) * sp.inner + i];
  return a.tape().push(std::move(out), {a}, [a, sp](Tape& t, const Tensor& g) {
    Tensor ga(a.shape());
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t e = 0; e < sp.extent; ++e)
        for (std::size_t i = 0; i < sp.inner; ++i)
          ga[(o * sp.extent + e) * sp.inner + i] = g[o * sp.inner + i];
    t.accumulate(a, ga);
  });
}

Var mean(Var a, std::optional<std::size_t> axis) {
  const std::size_t count = axis ? a.value().dim(*axis) : a.value().size();
  if (count == 0) throw DimensionError("mean over an empty extent");
  return mul_scalar(sum(a, axis), 1.0 / static_cast<double>(count));
}

Var max(Var a, std::optional<std::size_t> axis) {
  const Tensor& av = a.value();
  if (av.size() == 0) throw DimensionError("max of an empty tensor");
  AxisSplit sp;
  if (axis) {
    sp = split_axis(av.shape(), *axis, "max");
  } else {
    sp.extent = av.size();
  }
  Tensor out(sp.reduced);
  std::vector<std::size_t> arg(sp.outer * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      std::size_t best = o * sp.extent * sp.inner + i;
      for (std::size_t e = 1; e < sp.extent; ++e) {
        const std::size_t idx = (o * sp.extent + e) * sp.inner + i;
        if (av[idx] > av[best]) best = idx;  // strict: first maximum wins
      }
      out[o * sp.inner + i] = av[best];
      arg[o * sp.inner + i] = best;
    }
  }
  return a.tape().push(std::move(out), {a}, [a, arg](Tape& t, const Tensor& g) {
    Tensor ga(a.shape());
    for (std::size_t j = 0; j < arg.size(); ++j) ga[arg[j]] += g[j];
    t.accumulate(a, ga);
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape().push(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    t.accumulate(a, g.reshaped(a.shape()));
  });
}

Var broadcast_rows(Var v, std::size_t rows) {
  require_rank(v, 1, "broadcast_rows");
  const Tensor& vv = v.value();
  const std::size_t n = vv.size();
  Tensor out({rows, n});
  for (std::size_t r = 0; r < rows; ++r)
    std::copy(vv.data().begin(), vv.data().end(), out.data().begin() + r * n);
  return v.tape().push(std::move(out), {v}, [v, rows, n](Tape& t, const Tensor& g) {
    Tensor gv({n});
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < n; ++c) gv[c] += g[r * n + c];
    t.accumulate(v, gv);
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  require_rank(a, 2, "slice_rows");
  const Tensor& av = a.value();
  if (begin > end || end > av.dim(0)) {
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") outside shape " + shape_str(av.shape()));
  }
  const std::size_t n = av.dim(1);
  Tensor out({end - begin, n},
             std::vector<double>(av.data().begin() + begin * n, av.data().begin() + end * n));
  return a.tape().push(std::move(out), {a}, [a, begin, n](Tape& t, const Tensor& g) {
    Tensor ga(a.shape());
    std::copy(g.data().begin(), g.data().end(), ga.data().begin() + begin * n);
    t.accumulate(a, ga);
  });
}

Var row(Var a, std::size_t r) {
  Var s = slice_rows(a, r, r + 1);
  return reshape(s, {a.value().dim(1)});
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ArgumentError("concat of zero tensors");
  std::vector<double> data;
  std::vector<std::size_t> sizes;
  for (const Var& p : parts) {
    require_rank(p, 1, "concat");
    same_tape(parts[0], p);
    const auto d = p.value().data();
    data.insert(data.end(), d.begin(), d.end());
    sizes.push_back(d.size());
  }
  Tensor out = Tensor::vector(std::move(data));
  std::vector<Var> ps(parts.begin(), parts.end());
  return parts[0].tape().push(std::move(out), parts, [ps, sizes](Tape& t, const Tensor& g) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (t.needs_grad(ps[i])) {
        Tensor gi({sizes[i]}, std::vector<double>(g.data().begin() + off,
                                                  g.data().begin() + off + sizes[i]));
        t.accumulate(ps[i], gi);
      }
      off += sizes[i];
    }
  });
}

Var stack_rows(std::span<const Var> rows) {
  if (rows.empty()) throw ArgumentError("stack_rows of zero tensors");
  const std::size_t n = rows[0].value().size();
  for (const Var& r : rows) {
    if (r.value().rank() != 1 || r.value().size() != n) {
      throw DimensionError("stack_rows: row shape " + shape_str(r.shape()) + " differs from [" +
                           std::to_string(n) + "]");
    }
  }
  Var flat = concat(rows);
  return reshape(flat, {rows.size(), n});
}

Var concat_rows(Var a, Var b) {
  require_rank(a, 2, "concat_rows");
  require_rank(b, 2, "concat_rows");
  if (a.value().dim(1) != b.value().dim(1)) {
    throw DimensionError("concat_rows: column mismatch " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.value().dim(0), p = b.value().dim(0), n = a.value().dim(1);
  const Var parts[] = {reshape(a, {m * n}), reshape(b, {p * n})};
  return reshape(concat(parts), {m + p, n});
}

Var concat_cols(Var a, Var b) {
  same_tape(a, b);
  require_rank(a, 2, "concat_cols");
  require_rank(b, 2, "concat_cols");
  const std::size_t m = a.value().dim(0);
  if (b.value().dim(0) != m) {
    throw DimensionError("concat_cols: row mismatch " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t n = a.value().dim(1), p = b.value().dim(1);
  Tensor out({m, n + p});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * (n + p) + j] = a.value()[i * n + j];
    for (std::size_t j = 0; j < p; ++j) out[i * (n + p) + n + j] = b.value()[i * p + j];
  }
  return a.tape().push(std::move(out), {a, b}, [a, b, m, n, p](Tape& t, const Tensor& g) {
    if (t.needs_grad(a)) {
      Tensor ga({m, n});
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] = g[i * (n + p) + j];
      t.accumulate(a, ga);
    }
    if (t.needs_grad(b)) {
      Tensor gb({m, p});
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < p; ++j) gb[i * p + j] = g[i * (n + p) + n + j];
      t.accumulate(b, gb);
    }
  });
}

Var gather(Var a, std::span<const std::size_t> flat_indices) {
  const Tensor& av = a.value();
  std::vector<std::size_t> idx(flat_indices.begin(), flat_indices.end());
  Tensor out({idx.size()});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= av.size()) {
      throw DimensionError("gather: index " + std::to_string(idx[i]) + " outside shape " +
                           shape_str(av.shape()));
    }
    out[i] = av[idx[i]];
  }
  return a.tape().push(std::move(out), {a}, [a, idx](Tape& t, const Tensor& g) {
    Tensor ga(a.shape());
    for (std::size_t i = 0; i < idx.size(); ++i) ga[idx[i]] += g[i];
    t.accumulate(a, ga);
  });
}

Var detach(Var a) { return a.tape().constant(a.value()); }

// ---------------------------------------------------------------------------
// Composite numerics
// ---------------------------------------------------------------------------

Var affine(Var x, Var weight, Var bias) {
  Var xw = matmul(x, weight);
  return add(xw, broadcast_rows(bias, xw.value().dim(0)));
}

Var log_softmax(Var a) {
  const Tensor& av = a.value();
  if (av.rank() != 1 && av.rank() != 2) {
    throw DimensionError("log_softmax: expected rank 1 or 2, got " + shape_str(av.shape()));
  }
  const std::size_t cols = av.shape().back();
  const std::size_t rows = av.rank() == 2 ? av.dim(0) : 1;
  if (cols == 0) throw DimensionError("log_softmax over an empty axis");
  Tensor out(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data().data() + r * cols;
    double m = x[0];
    for (std::size_t c = 1; c < cols; ++c) m = std::max(m, x[c]);
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += std::exp(x[c] - m);
    const double lse = m + std::log(s);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = x[c] - lse;
  }
  Tensor probs = out;
  for (double& v : probs.data()) v = std::exp(v);
  return a.tape().push(std::move(out), {a},
                       [a, rows, cols, probs = std::move(probs)](Tape& t, const Tensor& g) {
                         Tensor ga(a.shape());
                         for (std::size_t r = 0; r < rows; ++r) {
                           double gs = 0.0;
                           for (std::size_t c = 0; c < cols; ++c) gs += g[r * cols + c];
                           for (std::size_t c = 0; c < cols; ++c) {
                             const std::size_t i = r * cols + c;
                             ga[i] = g[i] - probs[i] * gs;
                           }
                         }
                         t.accumulate(a, ga);
                       });
}

Var softmax(Var a) { return exp(log_softmax(a)); }

Var normalize_rows(Var a, double min_norm) {
  require_rank(a, 2, "normalize_rows");
  const Tensor& av = a.value();
  const std::size_t m = av.dim(0), n = av.dim(1);
  Tensor out({m, n});
  std::vector<double> norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += av[i * n + j] * av[i * n + j];
    norms[i] = std::sqrt(s);
    const double d = std::max(norms[i], min_norm);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = av[i * n + j] / d;
  }
  Tensor y = out;
  return a.tape().push(std::move(out), {a},
                       [a, m, n, norms, min_norm, y = std::move(y)](Tape& t, const Tensor& g) {
                         Tensor ga({m, n});
                         for (std::size_t i = 0; i < m; ++i) {
                           const double d = std::max(norms[i], min_norm);
                           double yg = 0.0;
                           if (norms[i] > min_norm) {
                             for (std::size_t j = 0; j < n; ++j) yg += y[i * n + j] * g[i * n + j];
                           }
                           for (std::size_t j = 0; j < n; ++j) {
                             ga[i * n + j] = (g[i * n + j] - y[i * n + j] * yg) / d;
                           }
                         }
                         t.accumulate(a, ga);
                       });
}

// ---------------------------------------------------------------------------
// Convolution, pooling, normalization
// ---------------------------------------------------------------------------

Var conv2d(Var input, Var kernel, Var bias, std::size_t padding) {
  same_tape(input, kernel);
  same_tape(input, bias);
  const Tensor& in = input.value();
  const Tensor& w = kernel.value();
  const Tensor& b = bias.value();
  const bool batched = in.rank() == 4;
  if (!batched && in.rank() != 3) {
    throw DimensionError("conv2d: input must be [C x H x W] or [N x C x H x W], got " +
                         shape_str(in.shape()));
  }
  if (w.rank() != 4 || w.dim(2) != w.dim(3)) {
    throw DimensionError("conv2d: kernel must be [C_out x C_in x K x K], got " +
                         shape_str(w.shape()));
  }
  const std::size_t N = batched ? in.dim(0) : 1;
  const std::size_t C = in.dim(batched ? 1 : 0);
  const std::size_t H = in.dim(batched ? 2 : 1);
  const std::size_t W = in.dim(batched ? 3 : 2);
  const std::size_t CO = w.dim(0), K = w.dim(2);
  if (w.dim(1) != C) {
    throw DimensionError("conv2d: channel mismatch, input " + shape_str(in.shape()) +
                         " vs kernel " + shape_str(w.shape()));
  }
  if (b.rank() != 1 || b.size() != CO) {
    throw DimensionError("conv2d: bias " + shape_str(b.shape()) + " does not match kernel " +
                         shape_str(w.shape()));
  }
  if (H + 2 * padding < K || W + 2 * padding < K) {
    throw DimensionError("conv2d: kernel larger than padded input");
  }
  const std::size_t HO = H + 2 * padding - K + 1;
  const std::size_t WO = W + 2 * padding - K + 1;
  const auto pad = static_cast<std::ptrdiff_t>(padding);

  // Valid output range for kernel offset kk along an axis of length L.
  auto range = [pad](std::size_t kk, std::size_t L, std::size_t LO) {
    const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kk) - pad;
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
    const std::ptrdiff_t hi =
        std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(LO),
                                 static_cast<std::ptrdiff_t>(L) - shift);
    return std::pair<std::ptrdiff_t, std::ptrdiff_t>{lo, std::max(lo, hi)};
  };

  Shape out_shape = batched ? Shape{N, CO, HO, WO} : Shape{CO, HO, WO};
  Tensor out(out_shape);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t co = 0; co < CO; ++co) {
      double* o = out.data().data() + (n * CO + co) * HO * WO;
      std::fill(o, o + HO * WO, b[co]);
      for (std::size_t ci = 0; ci < C; ++ci) {
        const double* x = in.data().data() + (n * C + ci) * H * W;
        for (std::size_t ky = 0; ky < K; ++ky) {
          const auto [y0, y1] = range(ky, H, HO);
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(ky) - pad;
          for (std::size_t kx = 0; kx < K; ++kx) {
            const double wv = w[((co * C + ci) * K + ky) * K + kx];
            const auto [x0, x1] = range(kx, W, WO);
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(kx) - pad;
            for (std::ptrdiff_t y = y0; y < y1; ++y) {
              const double* xr = x + (y + sy) * static_cast<std::ptrdiff_t>(W) + sx;
              double* orow = o + y * static_cast<std::ptrdiff_t>(WO);
              for (std::ptrdiff_t xx = x0; xx < x1; ++xx) orow[xx] += wv * xr[xx];
            }
          }
        }
      }
    }
  }

  return input.tape().push(
      std::move(out), {input, kernel, bias},
      [=](Tape& t, const Tensor& g) {
        const Tensor& in = input.value();
        const Tensor& w = kernel.value();
        const bool need_in = t.needs_grad(input);
        const bool need_w = t.needs_grad(kernel);
        Tensor gin(need_in ? in.shape() : Shape{});
        Tensor gw(need_w ? w.shape() : Shape{});
        Tensor gb({CO});
        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t co = 0; co < CO; ++co) {
            const double* go = g.data().data() + (n * CO + co) * HO * WO;
            for (std::size_t i = 0; i < HO * WO; ++i) gb[co] += go[i];
            for (std::size_t ci = 0; ci < C; ++ci) {
              const double* x = in.data().data() + (n * C + ci) * H * W;
              double* gx = need_in ? gin.data().data() + (n * C + ci) * H * W : nullptr;
              for (std::size_t ky = 0; ky < K; ++ky) {
                const auto [y0, y1] = range(ky, H, HO);
                const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(ky) - pad;
                for (std::size_t kx = 0; kx < K; ++kx) {
                  const std::size_t widx = ((co * C + ci) * K + ky) * K + kx;
                  const double wv = w[widx];
                  const auto [x0, x1] = range(kx, W, WO);
                  const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(kx) - pad;
                  double acc = 0.0;
                  for (std::ptrdiff_t y = y0; y < y1; ++y) {
                    const std::ptrdiff_t base = (y + sy) * static_cast<std::ptrdiff_t>(W) + sx;
                    const double* grow = go + y * static_cast<std::ptrdiff_t>(WO);
                    for (std::ptrdiff_t xx = x0; xx < x1; ++xx) {
                      acc += grow[xx] * x[base + xx];
                      if (gx) gx[base + xx] += grow[xx] * wv;
                    }
                  }
                  if (need_w) gw[widx] += acc;
                }
              }
            }
          }
        }
        if (need_in) t.accumulate(input, gin);
        if (need_w) t.accumulate(kernel, gw);
        t.accumulate(bias, gb);
      });
}

Var avg_pool2d(Var input, std::size_t window) {
  require_rank(input, 4, "avg_pool2d");
  const Tensor& in = input.value();
  const std::size_t N = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
  if (window == 0 || H % window || W % window) {
    throw DimensionError("avg_pool2d: window " + std::to_string(window) +
                         " does not tile shape " + shape_str(in.shape()));
  }
  const std::size_t HO = H / window, WO = W / window;
  const double scale = 1.0 / static_cast<double>(window * window);
  Tensor out({N, C, HO, WO});
  for (std::size_t p = 0; p < N * C; ++p)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        out[(p * HO + y / window) * WO + x / window] += scale * in[(p * H + y) * W + x];
  return input.tape().push(std::move(out), {input}, [=](Tape& t, const Tensor& g) {
    Tensor gin(input.shape());
    for (std::size_t p = 0; p < N * C; ++p)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
          gin[(p * H + y) * W + x] = scale * g[(p * HO + y / window) * WO + x / window];
    t.accumulate(input, gin);
  });
}

Var batch_norm(Var x, Var gamma, Var beta, double eps, const ChannelMoments* running,
               ChannelMoments* observed) {
  same_tape(x, gamma);
  same_tape(x, beta);
  const Tensor& xv = x.value();
  if (xv.rank() != 2 && xv.rank() != 4) {
    throw DimensionError("batch_norm: expected [N x C] or [N x C x H x W], got " +
                         shape_str(xv.shape()));
  }
  const std::size_t N = xv.dim(0), C = xv.dim(1);
  const std::size_t S = xv.rank() == 4 ? xv.dim(2) * xv.dim(3) : 1;
  if (gamma.value().size() != C || beta.value().size() != C) {
    throw DimensionError("batch_norm: affine parameters do not match " + std::to_string(C) +
                         " channels");
  }
  const double M = static_cast<double>(N * S);
  std::vector<double> mu(C, 0.0), var(C, 0.0);
  if (running) {
    if (running->mean.size() != C || running->var.size() != C) {
      throw DimensionError("batch_norm: running moments do not match channel count");
    }
    mu = running->mean;
    var = running->var;
  } else {
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t s = 0; s < S; ++s) mu[c] += xv[(n * C + c) * S + s];
    for (double& m : mu) m /= M;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t s = 0; s < S; ++s) {
          const double d = xv[(n * C + c) * S + s] - mu[c];
          var[c] += d * d;
        }
    for (double& v : var) v /= M;
    if (observed) *observed = ChannelMoments{mu, var};
  }
  std::vector<double> inv_std(C);
  for (std::size_t c = 0; c < C; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);

  Tensor xhat(xv.shape());
  Tensor out(xv.shape());
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t s = 0; s < S; ++s) {
        const std::size_t i = (n * C + c) * S + s;
        xhat[i] = (xv[i] - mu[c]) * inv_std[c];
        out[i] = gv[c] * xhat[i] + bv[c];
      }

  const bool batch_stats = running == nullptr;
  return x.tape().push(
      std::move(out), {x, gamma, beta},
      [=, xhat = std::move(xhat)](Tape& t, const Tensor& g) {
        const Tensor& gv = gamma.value();
        Tensor ggamma({C}), gbeta({C});
        std::vector<double> sum_dxhat(C, 0.0), sum_dxhat_xhat(C, 0.0);
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t s = 0; s < S; ++s) {
              const std::size_t i = (n * C + c) * S + s;
              ggamma[c] += g[i] * xhat[i];
              gbeta[c] += g[i];
              const double dxhat = g[i] * gv[c];
              sum_dxhat[c] += dxhat;
              sum_dxhat_xhat[c] += dxhat * xhat[i];
            }
        if (t.needs_grad(x)) {
          Tensor gx(x.shape());
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t s = 0; s < S; ++s) {
                const std::size_t i = (n * C + c) * S + s;
                const double dxhat = g[i] * gv[c];
                gx[i] = batch_stats ? inv_std[c] / M *
                                          (M * dxhat - sum_dxhat[c] - xhat[i] * sum_dxhat_xhat[c])
                                    : dxhat * inv_std[c];
              }
          t.accumulate(x, gx);
        }
        t.accumulate(gamma, ggamma);
        t.accumulate(beta, gbeta);
      });
}

}  // namespace sparseattn
