#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "sparseattn/parameter.hpp"
#include "sparseattn/tensor.hpp"

namespace sparseattn {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid as long as the
/// Tape that produced it is alive.
class Var {
 public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Append-only record of operations for reverse-mode differentiation.
///
/// Nodes are stored in creation order, which is a topological order of the
/// graph; backward() walks them once in exact reverse. A tape is single-use:
/// a second backward() throws. Constructing a tape with `record = false`
/// evaluates forward values only and never allocates backward closures.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Tensor value);
  Var variable(Tensor value);
  // Leaf bound to a parameter; its gradient is retrievable by param_grad().
  Var param(const Parameter& p);

  // Seeds d(root)/d(root) = 1 for a single-element root and propagates.
  void backward(Var root);
  bool backward_done() const { return backward_done_; }

  // Gradient of the last backward root w.r.t. `v`; zeros if none reached it.
  Tensor grad(Var v) const;
  // Summed gradient over every leaf registered for `p`; zeros if unused.
  Tensor param_grad(const Parameter& p) const;

  std::size_t size() const { return nodes_.size(); }

  // Used by operation implementations.
  Var push(Tensor value, std::initializer_list<Var> parents, BackwardFn fn);
  Var push(Tensor value, std::span<const Var> parents, BackwardFn fn);
  bool needs_grad(Var v) const { return nodes_[v.id_].requires_grad; }
  void accumulate(Var v, const Tensor& g);

 private:
  friend class Var;

  struct Node {
    Tensor value;
    std::optional<Tensor> grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  void check_owned(Var v) const;

  bool record_;
  bool backward_done_ = false;
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::vector<std::size_t>> param_nodes_;
};

// --- Linear algebra ------------------------------------------------------

Var matmul(Var a, Var b);
Var transpose(Var a);

// --- Elementwise ---------------------------------------------------------
// Binary ops accept equal shapes or a single-element operand (scalar
// broadcast). Nothing else broadcasts.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var add_scalar(Var a, double s);
Var mul_scalar(Var a, double s);
Var neg(Var a);
Var relu(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
Var pow_scalar(Var a, double exponent);
Var clamp_min(Var a, double lo);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }

// --- Reductions ----------------------------------------------------------
// Without an axis the result is rank-0. With an axis that extent is removed.

Var sum(Var a, std::optional<std::size_t> axis = std::nullopt);
Var mean(Var a, std::optional<std::size_t> axis = std::nullopt);
// Ties route the gradient to the lowest flat index.
Var max(Var a, std::optional<std::size_t> axis = std::nullopt);

// --- Shape manipulation --------------------------------------------------

Var reshape(Var a, Shape shape);
Var broadcast_rows(Var v, std::size_t rows);  // [n] -> [rows x n]
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var row(Var a, std::size_t r);                // rank-2 -> [n]
Var concat(std::span<const Var> parts);       // rank-1 pieces -> rank-1
Var stack_rows(std::span<const Var> rows);    // k rank-1 [n] -> [k x n]
Var concat_rows(Var a, Var b);                // [m x n],[p x n] -> [(m+p) x n]
Var concat_cols(Var a, Var b);                // [m x n],[m x p] -> [m x (n+p)]
Var gather(Var a, std::span<const std::size_t> flat_indices);  // -> rank-1
Var detach(Var a);

// --- Composite numerics --------------------------------------------------

Var affine(Var x, Var weight, Var bias);      // x[m x n] W[n x p] + b[p]
Var log_softmax(Var a);                       // over the last axis, rank 1 or 2
Var softmax(Var a);
Var normalize_rows(Var a, double min_norm);   // L2 per row, rank 2

// --- Convolution, pooling, normalization --------------------------------

// input [C_in x H x W] or [N x C_in x H x W]; kernel [C_out x C_in x K x K];
// bias [C_out]. Cross-correlation with zero padding, stride 1.
Var conv2d(Var input, Var kernel, Var bias, std::size_t padding);

// Non-overlapping window average, input [N x C x H x W], H and W divisible.
Var avg_pool2d(Var input, std::size_t window);

struct ChannelMoments {
  std::vector<double> mean;
  std::vector<double> var;  // biased (population) variance
};

// x is [N x C] or [N x C x H x W]; statistics are per channel C over all other
// axes. With `running` set, normalizes by those fixed moments; otherwise by
// the batch moments, which are written to `observed` when non-null.
Var batch_norm(Var x, Var gamma, Var beta, double eps,
               const ChannelMoments* running, ChannelMoments* observed = nullptr);

}  // namespace sparseattn
