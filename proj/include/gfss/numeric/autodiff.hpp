// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "gfss/numeric/tensor.hpp"

// Tape-based reverse-mode differentiation over a fixed op set.
//
// Every op appends one node to the tape; creation order is a topological
// order, so backward() is a single reverse sweep. Nodes that do not depend on
// a parameter carry requires_grad = false and never get a gradient buffer.
// A tape supports exactly one backward(); a second call throws ContractError.

namespace gfss::ad {

enum class OpKind : std::uint8_t {
  kLeaf,
  kMatmul,
  kMatmulNT,
  kTranspose,
  kReshape,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAddScalar,
  kExp,
  kLog,
  kTanh,
  kXLogX,
  kMaximum,
  kSoftmaxRows,
  kLogSoftmaxRows,
  kSoftmaxCols,
  kOuter,
  kSum,
  kMean,
  kSumRows,
  kSumCols,
  kMeanRows,
  kMeanCols,
  kGatherRows,
  kConcatRows,
  kAddRowVector,
  kRowOuter,
  kBlockSoftmaxCols,
  kRowMatVec,
};

const char* op_name(OpKind kind);

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  Tape* tape() const { return tape_; }
  std::uint32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

class Tape {
 public:
  /// Called with the node's own output value and its incoming gradient.
  using BackwardFn = std::function<void(Tape&, const Tensor& out_value, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var parameter(Tensor value);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  OpKind kind(Var v) const;
  /// Gradient accumulated into `v` by backward(); nullptr if never materialized.
  const Tensor* grad(Var v) const;

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse.
  void backward(Var loss);
  bool backward_done() const { return backward_done_; }
  /// Number of op nodes whose backward rule ran during backward().
  std::size_t backward_visits() const { return backward_visits_; }
  std::size_t size() const { return nodes_.size(); }

  // Op authoring interface.
  Var record(OpKind kind, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  /// Gradient buffer of `v`, zero-initialized on first use; nullptr for constants.
  Tensor* grad_buffer(Var v);

 private:
  struct Node {
    OpKind kind = OpKind::kLeaf;
    Tensor value;
    std::optional<Tensor> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Node& node(Var v);
  const Node& node(Var v) const;

  std::deque<Node> nodes_;
  bool backward_done_ = false;
  std::size_t backward_visits_ = 0;
};

// ---- ops -------------------------------------------------------------------

/// (m x k) * (k x n)
Var matmul(Var a, Var b);
/// (m x k) * (n x k)^T
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
Var reshape(Var a, Shape shape);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);

Var exp(Var a);
/// Throws DomainError if any entry is <= 0.
Var log(Var a);
Var tanh(Var a);
/// x * log(x) with the convention 0 * log(0) = 0; requires x >= 0.
Var xlogx(Var a);
/// Elementwise max(a, c) for a constant c; the gradient passes where a > c.
Var maximum(Var a, double c);

/// Softmax along each row, computed with the row max subtracted.
Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
/// Softmax down each column.
Var softmax_cols(Var a);
/// u (n) outer v (m) -> (n x m)
Var outer(Var u, Var v);

Var sum(Var a);
Var mean(Var a);
/// (n x m) -> (n): per-row reduction.
Var sum_rows(Var a);
Var mean_rows(Var a);
/// (n x m) -> (m): per-column reduction.
Var sum_cols(Var a);
Var mean_cols(Var a);

Var gather_rows(Var a, std::span<const std::size_t> indices);
/// Stacks `b` under `a`; column counts must agree.
Var concat_rows(Var a, Var b);
/// (n x m) + v (m) broadcast over rows.
Var add_row_vector(Var a, Var v);

// Batched per-row forms used for per-pixel K x B matrices stored flattened
// row-major in one row of an (n x K*B) tensor.

/// (n x K) with (n x B) -> (n x K*B), row i holds c_i outer r_i.
Var row_outer(Var c, Var r);
/// Softmax down each of the B columns of every row's K x B matrix.
Var block_softmax_cols(Var a, std::size_t k_rows);
/// (n x K*B) with (n x B) -> (n x K), row i holds S_i * p_i.
Var row_matvec(Var s, Var p);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }

// ---- plain tensor forms (no tape) -------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor softmax_rows(const Tensor& a);
Tensor softmax_cols(const Tensor& a);
Tensor outer(const Tensor& u, const Tensor& v);

// ---- whole-function helpers --------------------------------------------------

/// Builds the scalar objective on a fresh tape from parameter leaves.
using LossFn = std::function<Var(Tape&, std::span<const Var>)>;

struct ValueAndGrad {
  double value = 0.0;
  std::vector<Tensor> grads;
};

/// Evaluates `fn` at `params` and returns the value with one gradient per
/// parameter. Throws ContractError when the result is not a single element.
ValueAndGrad value_and_grad(const LossFn& fn, std::span<const Tensor> params);
/// Forward only.
double evaluate(const LossFn& fn, std::span<const Tensor> params);

}  // namespace gfss::ad
