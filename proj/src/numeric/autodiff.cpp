// SPDX-License-Identifier: Apache-2.0
#include "gfss/numeric/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "gfss/errors.hpp"
#include "gfss/numeric/kernels.hpp"

namespace gfss::ad {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kMatmulNT: return "matmul_nt";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kReshape: return "reshape";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kAddScalar: return "add_scalar";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kTanh: return "tanh";
    case OpKind::kXLogX: return "xlogx";
    case OpKind::kMaximum: return "maximum";
    case OpKind::kSoftmaxRows: return "softmax_rows";
    case OpKind::kLogSoftmaxRows: return "log_softmax_rows";
    case OpKind::kSoftmaxCols: return "softmax_cols";
    case OpKind::kOuter: return "outer";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kSumRows: return "sum_rows";
    case OpKind::kSumCols: return "sum_cols";
    case OpKind::kMeanRows: return "mean_rows";
    case OpKind::kMeanCols: return "mean_cols";
    case OpKind::kGatherRows: return "gather_rows";
    case OpKind::kConcatRows: return "concat_rows";
    case OpKind::kAddRowVector: return "add_row_vector";
    case OpKind::kRowOuter: return "row_outer";
    case OpKind::kBlockSoftmaxCols: return "block_softmax_cols";
    case OpKind::kRowMatVec: return "row_matvec";
  }
  return "?";
}

// ---- Var / Tape --------------------------------------------------------------

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("use of an empty Var");
  return tape_->value(*this);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(*this); }

Tape::Node& Tape::node(Var v) {
  if (v.tape_ != this || v.id_ >= nodes_.size()) throw ContractError("Var does not belong to this tape");
  return nodes_[v.id_];
}

const Tape::Node& Tape::node(Var v) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) throw ContractError("Var does not belong to this tape");
  return nodes_[v.id_];
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{OpKind::kLeaf, std::move(value), std::nullopt, false, {}});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::parameter(Tensor value) {
  nodes_.push_back(Node{OpKind::kLeaf, std::move(value), std::nullopt, true, {}});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

const Tensor& Tape::value(Var v) const { return node(v).value; }
bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }
OpKind Tape::kind(Var v) const { return node(v).kind; }

const Tensor* Tape::grad(Var v) const {
  const Node& n = node(v);
  return n.grad ? &*n.grad : nullptr;
}

Var Tape::record(OpKind kind, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  bool needs = false;
  for (Var in : inputs) needs = needs || node(in).requires_grad;
  nodes_.push_back(Node{kind, std::move(value), std::nullopt, needs, needs ? std::move(backward) : BackwardFn{}});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Tensor* Tape::grad_buffer(Var v) {
  Node& n = node(v);
  if (!n.requires_grad) return nullptr;
  if (!n.grad) n.grad.emplace(n.value.shape());
  return &*n.grad;
}

void Tape::backward(Var loss) {
  if (backward_done_) throw ContractError("backward() already ran on this tape; re-run the forward pass");
  const Node& root = node(loss);
  if (root.value.size() != 1) throw ContractError("backward() needs a scalar loss, got shape " + root.value.shape().str());
  backward_done_ = true;
  if (!root.requires_grad) return;
  grad_buffer(loss)->data()[0] = 1.0;
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.grad || !n.backward) continue;
    n.backward(*this, n.value, *n.grad);
    ++backward_visits_;
  }
}

// ---- helpers -----------------------------------------------------------------

namespace {

void same_tape(Var a, Var b) {
  if (a.tape() != b.tape() || !a.valid()) throw ContractError("operands live on different tapes");
}

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw ShapeError(std::string(what) + ": expected a matrix, got " + t.shape().str());
}

void require_vector(const Tensor& t, const char* what) {
  if (t.rank() != 1) throw ShapeError(std::string(what) + ": expected a vector, got " + t.shape().str());
}

void accumulate(Tensor* dst, const Tensor& g) {
  if (dst) kernels::axpy(1.0, g.data(), dst->data());
}

void accumulate_scaled(Tensor* dst, double s, const Tensor& g) {
  if (dst) kernels::axpy(s, g.data(), dst->data());
}

template <class Fwd, class Deriv>
Var unary_map(Var a, OpKind kind, Fwd fwd, Deriv deriv) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
  return a.tape()->record(kind, std::move(out), {a}, [a, deriv](Tape& t, const Tensor& y, const Tensor& g) {
    Tensor* ga = t.grad_buffer(a);
    if (!ga) return;
    const Tensor& x = a.value();
    for (std::size_t i = 0; i < x.size(); ++i) (*ga)[i] += g[i] * deriv(x[i], y[i]);
  });
}

Tensor softmax_rows_impl(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    auto out = y.row(r);
    const double m = *std::max_element(in.begin(), in.end());
    double s = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) s += (out[c] = std::exp(in[c] - m));
    for (double& v : out) v /= s;
  }
  return y;
}

Tensor softmax_cols_impl(const Tensor& x) {
  Tensor y(x.shape());
  const std::size_t R = x.rows(), C = x.cols();
  for (std::size_t c = 0; c < C; ++c) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < R; ++r) m = std::max(m, x(r, c));
    double s = 0.0;
    for (std::size_t r = 0; r < R; ++r) s += (y(r, c) = std::exp(x(r, c) - m));
    for (std::size_t r = 0; r < R; ++r) y(r, c) /= s;
  }
  return y;
}

Shape matrix_shape(std::size_t r, std::size_t c) { return Shape::matrix(r, c); }

}  // namespace

// ---- linear algebra ------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows()) throw ShapeError("matmul: " + a.shape().str() + " * " + b.shape().str());
  Tensor out(matrix_shape(a.rows(), b.cols()));
  kernels::gemm_nn(a.rows(), a.cols(), b.cols(), a.data().data(), b.data().data(), out.data().data());
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  if (a.cols() != b.cols()) throw ShapeError("matmul_nt: " + a.shape().str() + " * " + b.shape().str() + "^T");
  Tensor out(matrix_shape(a.rows(), b.rows()));
  kernels::gemm_nt(a.rows(), a.cols(), b.rows(), a.data().data(), b.data().data(), out.data().data());
  return out;
}

Tensor softmax_rows(const Tensor& a) { return softmax_rows_impl(a); }
Tensor softmax_cols(const Tensor& a) { return softmax_cols_impl(a); }

Tensor outer(const Tensor& u, const Tensor& v) {
  require_vector(u, "outer");
  require_vector(v, "outer");
  Tensor out(matrix_shape(u.size(), v.size()));
  for (std::size_t i = 0; i < u.size(); ++i) kernels::scale(u[i], v.data(), out.row(i));
  return out;
}

Var matmul(Var a, Var b) {
  same_tape(a, b);
  Tensor out = matmul(a.value(), b.value());
  return a.tape()->record(OpKind::kMatmul, std::move(out), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
    if (Tensor* ga = t.grad_buffer(a)) kernels::gemm_nt(m, n, k, g.data().data(), bv.data().data(), ga->data().data());
    if (Tensor* gb = t.grad_buffer(b)) kernels::gemm_tn(k, m, n, av.data().data(), g.data().data(), gb->data().data());
  });
}

Var matmul_nt(Var a, Var b) {
  same_tape(a, b);
  Tensor out = matmul_nt(a.value(), b.value());
  return a.tape()->record(OpKind::kMatmulNT, std::move(out), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
    if (Tensor* ga = t.grad_buffer(a)) kernels::gemm_nn(m, n, k, g.data().data(), bv.data().data(), ga->data().data());
    if (Tensor* gb = t.grad_buffer(b)) kernels::gemm_tn(n, m, k, g.data().data(), av.data().data(), gb->data().data());
  });
}

Var transpose(Var a) {
  require_matrix(a.value(), "transpose");
  return a.tape()->record(OpKind::kTranspose, a.value().transposed(), {a}, [a](Tape& t, const Tensor&, const Tensor& g) {
    accumulate(t.grad_buffer(a), g.transposed());
  });
}

Var reshape(Var a, Shape shape) {
  return a.tape()->record(OpKind::kReshape, a.value().reshaped(shape), {a}, [a](Tape& t, const Tensor&, const Tensor& g) {
    if (Tensor* ga = t.grad_buffer(a)) kernels::axpy(1.0, g.data(), ga->data());
  });
}

// ---- elementwise ----------------------------------------------------------------

Var add(Var a, Var b) {
  same_tape(a, b);
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor out(a.shape());
  kernels::add(a.value().data(), b.value().data(), out.data());
  return a.tape()->record(OpKind::kAdd, std::move(out), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
    accumulate(t.grad_buffer(a), g);
    accumulate(t.grad_buffer(b), g);
  });
}

Var sub(Var a, Var b) {
  same_tape(a, b);
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor out(a.shape());
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return a.tape()->record(OpKind::kSub, std::move(out), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
    accumulate(t.grad_buffer(a), g);
    accumulate_scaled(t.grad_buffer(b), -1.0, g);
  });
}

Var mul(Var a, Var b) {
  same_tape(a, b);
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor out(a.shape());
  kernels::mul(a.value().data(), b.value().data(), out.data());
  return a.tape()->record(OpKind::kMul, std::move(out), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (Tensor* ga = t.grad_buffer(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
    if (Tensor* gb = t.grad_buffer(b))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
  });
}

Var scale(Var a, double s) {
  Tensor out(a.shape());
  kernels::scale(s, a.value().data(), out.data());
  return a.tape()->record(OpKind::kScale, std::move(out), {a}, [a, s](Tape& t, const Tensor&, const Tensor& g) {
    accumulate_scaled(t.grad_buffer(a), s, g);
  });
}

Var add_scalar(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.data()) v += s;
  return a.tape()->record(OpKind::kAddScalar, std::move(out), {a}, [a](Tape& t, const Tensor&, const Tensor& g) {
    accumulate(t.grad_buffer(a), g);
  });
}

Var exp(Var a) {
  return unary_map(a, OpKind::kExp, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  for (double v : a.value().data()) {
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
  }
  return unary_map(a, OpKind::kLog, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var tanh(Var a) {
  return unary_map(a, OpKind::kTanh, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var xlogx(Var a) {
  for (double v : a.value().data()) {
    if (v < 0.0 || !std::isfinite(v)) throw DomainError("xlogx of negative value " + std::to_string(v));
  }
  // At x = 0 the derivative diverges; it is evaluated at the smallest normal double instead.
  return unary_map(
      a, OpKind::kXLogX, [](double x) { return x > 0.0 ? x * std::log(x) : 0.0; },
      [](double x, double) { return std::log(std::max(x, std::numeric_limits<double>::min())) + 1.0; });
}

Var maximum(Var a, double c) {
  return unary_map(
      a, OpKind::kMaximum, [c](double x) { return std::max(x, c); }, [c](double x, double) { return x > c ? 1.0 : 0.0; });
}

// ---- softmax family --------------------------------------------------------------

Var softmax_rows(Var a) {
  return a.tape()->record(OpKind::kSoftmaxRows, softmax_rows_impl(a.value()), {a},
                          [a](Tape& t, const Tensor& y, const Tensor& g) {
                            Tensor* ga = t.grad_buffer(a);
                            if (!ga) return;
                            for (std::size_t r = 0; r < y.rows(); ++r) {
                              const double dotgy = kernels::dot(g.row(r), y.row(r));
                              auto yr = y.row(r);
                              auto gr = g.row(r);
                              auto out = ga->row(r);
                              for (std::size_t c = 0; c < yr.size(); ++c) out[c] += yr[c] * (gr[c] - dotgy);
                            }
                          });
}

Var log_softmax_rows(Var a) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    const double m = *std::max_element(in.begin(), in.end());
    double s = 0.0;
    for (double v : in) s += std::exp(v - m);
    const double lse = m + std::log(s);
    auto out = y.row(r);
    for (std::size_t c = 0; c < in.size(); ++c) out[c] = in[c] - lse;
  }
  return a.tape()->record(OpKind::kLogSoftmaxRows, std::move(y), {a}, [a](Tape& t, const Tensor& y, const Tensor& g) {
    Tensor* ga = t.grad_buffer(a);
    if (!ga) return;
    for (std::size_t r = 0; r < y.rows(); ++r) {
      auto yr = y.row(r);
      auto gr = g.row(r);
      double gs = 0.0;
      for (double v : gr) gs += v;
      auto out = ga->row(r);
      for (std::size_t c = 0; c < yr.size(); ++c) out[c] += gr[c] - std::exp(yr[c]) * gs;
    }
  });
}

Var softmax_cols(Var a) {
  return a.tape()->record(OpKind::kSoftmaxCols, softmax_cols_impl(a.value()), {a},
                          [a](Tape& t, const Tensor& y, const Tensor& g) {
                            Tensor* ga = t.grad_buffer(a);
                            if (!ga) return;
                            for (std::size_t c = 0; c < y.cols(); ++c) {
                              double dotgy = 0.0;
                              for (std::size_t r = 0; r < y.rows(); ++r) dotgy += g(r, c) * y(r, c);
                              for (std::size_t r = 0; r < y.rows(); ++r) (*ga)(r, c) += y(r, c) * (g(r, c) - dotgy);
                            }
                          });
}

Var outer(Var u, Var v) {
  same_tape(u, v);
  Tensor out = outer(u.value(), v.value());
  return u.tape()->record(OpKind::kOuter, std::move(out), {u, v}, [u, v](Tape& t, const Tensor&, const Tensor& g) {
    const Tensor& uv = u.value();
    const Tensor& vv = v.value();
    if (Tensor* gu = t.grad_buffer(u))
      for (std::size_t i = 0; i < uv.size(); ++i) (*gu)[i] += kernels::dot(g.row(i), vv.data());
    if (Tensor* gv = t.grad_buffer(v))
      for (std::size_t i = 0; i < uv.size(); ++i) kernels::axpy(uv[i], g.row(i), gv->data());
  });
}

// ---- reductions ---------------------------------------------------------------

namespace {

Var full_reduce(Var a, OpKind kind, double factor) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape()->record(kind, Tensor::scalar(s * factor), {a}, [a, factor](Tape& t, const Tensor&, const Tensor& g) {
    Tensor* ga = t.grad_buffer(a);
    if (!ga) return;
    const double d = g[0] * factor;
    for (double& v : ga->data()) v += d;
  });
}

Var row_reduce(Var a, OpKind kind, bool average) {
  const Tensor& x = a.value();
  const double factor = average ? 1.0 / static_cast<double>(x.cols()) : 1.0;
  Tensor out(Shape::vector(x.rows()));
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double s = 0.0;
    for (double v : x.row(r)) s += v;
    out[r] = s * factor;
  }
  return a.tape()->record(kind, std::move(out), {a}, [a, factor](Tape& t, const Tensor&, const Tensor& g) {
    Tensor* ga = t.grad_buffer(a);
    if (!ga) return;
    for (std::size_t r = 0; r < ga->rows(); ++r)
      for (double& v : ga->row(r)) v += g[r] * factor;
  });
}

Var col_reduce(Var a, OpKind kind, bool average) {
  const Tensor& x = a.value();
  const double factor = average ? 1.0 / static_cast<double>(x.rows()) : 1.0;
  Tensor out(Shape::vector(x.cols()));
  for (std::size_t r = 0; r < x.rows(); ++r) kernels::axpy(1.0, x.row(r), out.data());
  if (average) kernels::scale(factor, out.data(), out.data());
  return a.tape()->record(kind, std::move(out), {a}, [a, factor](Tape& t, const Tensor&, const Tensor& g) {
    Tensor* ga = t.grad_buffer(a);
    if (!ga) return;
    for (std::size_t r = 0; r < ga->rows(); ++r) kernels::axpy(factor, g.data(), ga->row(r));
  });
}

}  // namespace

Var sum(Var a) { return full_reduce(a, OpKind::kSum, 1.0); }
Var mean(Var a) { return full_reduce(a, OpKind::kMean, 1.0 / static_cast<double>(a.value().size())); }
Var sum_rows(Var a) { return row_reduce(a, OpKind::kSumRows, false); }
Var mean_rows(Var a) { return row_reduce(a, OpKind::kMeanRows, true); }
Var sum_cols(Var a) { return col_reduce(a, OpKind::kSumCols, false); }
Var mean_cols(Var a) { return col_reduce(a, OpKind::kMeanCols, true); }

// ---- indexing / layout -----------------------------------------------------------

Var gather_rows(Var a, std::span<const std::size_t> indices) {
  const Tensor& x = a.value();
  require_matrix(x, "gather_rows");
  Tensor out(matrix_shape(indices.size(), x.cols()));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= x.rows()) throw ShapeError("gather_rows: index " + std::to_string(indices[i]) + " out of range");
    std::copy(x.row(indices[i]).begin(), x.row(indices[i]).end(), out.row(i).begin());
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return a.tape()->record(OpKind::kGatherRows, std::move(out), {a},
                          [a, idx = std::move(idx)](Tape& t, const Tensor&, const Tensor& g) {
                            Tensor* ga = t.grad_buffer(a);
                            if (!ga) return;
                            for (std::size_t i = 0; i < idx.size(); ++i) kernels::axpy(1.0, g.row(i), ga->row(idx[i]));
                          });
}

Var concat_rows(Var a, Var b) {
  same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() == 0 || y.rank() == 0 || x.cols() != y.cols()) {
    throw ShapeError("concat_rows: " + x.shape().str() + " and " + y.shape().str());
  }
  std::vector<double> data(x.data().begin(), x.data().end());
  data.insert(data.end(), y.data().begin(), y.data().end());
  Tensor out = Tensor::matrix(x.rows() + y.rows(), x.cols(), std::move(data));
  const std::size_t split = x.size();
  return a.tape()->record(OpKind::kConcatRows, std::move(out), {a, b}, [a, b, split](Tape& t, const Tensor&, const Tensor& g) {
    if (Tensor* ga = t.grad_buffer(a)) kernels::axpy(1.0, g.data().subspan(0, split), ga->data());
    if (Tensor* gb = t.grad_buffer(b)) kernels::axpy(1.0, g.data().subspan(split), gb->data());
  });
}

Var add_row_vector(Var a, Var v) {
  same_tape(a, v);
  const Tensor& x = a.value();
  const Tensor& bias = v.value();
  require_vector(bias, "add_row_vector");
  if (bias.size() != x.cols()) throw ShapeError("add_row_vector: " + x.shape().str() + " + " + bias.shape().str());
  Tensor out(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) kernels::add(x.row(r), bias.data(), out.row(r));
  return a.tape()->record(OpKind::kAddRowVector, std::move(out), {a, v}, [a, v](Tape& t, const Tensor&, const Tensor& g) {
    accumulate(t.grad_buffer(a), g);
    if (Tensor* gv = t.grad_buffer(v))
      for (std::size_t r = 0; r < g.rows(); ++r) kernels::axpy(1.0, g.row(r), gv->data());
  });
}

// ---- batched per-row matrices ------------------------------------------------

Var row_outer(Var c, Var r) {
  same_tape(c, r);
  const Tensor& cv = c.value();
  const Tensor& rv = r.value();
  require_matrix(cv, "row_outer");
  require_matrix(rv, "row_outer");
  if (cv.rows() != rv.rows()) throw ShapeError("row_outer: row counts differ");
  const std::size_t K = cv.cols(), B = rv.cols();
  Tensor out(matrix_shape(cv.rows(), K * B));
  for (std::size_t n = 0; n < cv.rows(); ++n) {
    auto cr = cv.row(n);
    auto o = out.row(n);
    auto rr = rv.row(n);
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t b = 0; b < B; ++b) o[k * B + b] = cr[k] * rr[b];
  }
  return c.tape()->record(OpKind::kRowOuter, std::move(out), {c, r}, [c, r, K, B](Tape& t, const Tensor&, const Tensor& g) {
    const Tensor& cv = c.value();
    const Tensor& rv = r.value();
    Tensor* gc = t.grad_buffer(c);
    Tensor* gr = t.grad_buffer(r);
    // Blocks are a handful of entries wide; plain loops beat kernel dispatch here.
    for (std::size_t n = 0; n < cv.rows(); ++n) {
      const double* gn = g.row(n).data();
      const double* rr = rv.row(n).data();
      for (std::size_t k = 0; k < K; ++k) {
        const double* block = gn + k * B;
        if (gc) {
          double d = 0.0;
          for (std::size_t b = 0; b < B; ++b) d += block[b] * rr[b];
          (*gc)(n, k) += d;
        }
        if (gr) {
          double* out = gr->row(n).data();
          const double ck = cv(n, k);
          for (std::size_t b = 0; b < B; ++b) out[b] += ck * block[b];
        }
      }
    }
  });
}

Var block_softmax_cols(Var a, std::size_t k_rows) {
  const Tensor& x = a.value();
  require_matrix(x, "block_softmax_cols");
  if (k_rows == 0 || x.cols() % k_rows != 0) throw ShapeError("block_softmax_cols: width not divisible by block rows");
  const std::size_t K = k_rows, B = x.cols() / k_rows;
  Tensor y(x.shape());
  for (std::size_t n = 0; n < x.rows(); ++n) {
    auto in = x.row(n);
    auto out = y.row(n);
    for (std::size_t b = 0; b < B; ++b) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < K; ++k) m = std::max(m, in[k * B + b]);
      double s = 0.0;
      for (std::size_t k = 0; k < K; ++k) s += (out[k * B + b] = std::exp(in[k * B + b] - m));
      for (std::size_t k = 0; k < K; ++k) out[k * B + b] /= s;
    }
  }
  return a.tape()->record(OpKind::kBlockSoftmaxCols, std::move(y), {a}, [a, K, B](Tape& t, const Tensor& y, const Tensor& g) {
    Tensor* ga = t.grad_buffer(a);
    if (!ga) return;
    for (std::size_t n = 0; n < y.rows(); ++n) {
      auto yn = y.row(n);
      auto gn = g.row(n);
      auto out = ga->row(n);
      for (std::size_t b = 0; b < B; ++b) {
        double d = 0.0;
        for (std::size_t k = 0; k < K; ++k) d += gn[k * B + b] * yn[k * B + b];
        for (std::size_t k = 0; k < K; ++k) out[k * B + b] += yn[k * B + b] * (gn[k * B + b] - d);
      }
    }
  });
}

Var row_matvec(Var s, Var p) {
  same_tape(s, p);
  const Tensor& sv = s.value();
  const Tensor& pv = p.value();
  require_matrix(sv, "row_matvec");
  require_matrix(pv, "row_matvec");
  const std::size_t B = pv.cols();
  if (sv.rows() != pv.rows() || B == 0 || sv.cols() % B != 0) {
    throw ShapeError("row_matvec: " + sv.shape().str() + " with " + pv.shape().str());
  }
  const std::size_t K = sv.cols() / B;
  Tensor out(matrix_shape(sv.rows(), K));
  for (std::size_t n = 0; n < sv.rows(); ++n) {
    auto sn = sv.row(n);
    auto pn = pv.row(n);
    for (std::size_t k = 0; k < K; ++k) {
      double d = 0.0;
      for (std::size_t b = 0; b < B; ++b) d += sn[k * B + b] * pn[b];
      out(n, k) = d;
    }
  }
  return s.tape()->record(OpKind::kRowMatVec, std::move(out), {s, p}, [s, p, K, B](Tape& t, const Tensor&, const Tensor& g) {
    const Tensor& sv = s.value();
    const Tensor& pv = p.value();
    Tensor* gs = t.grad_buffer(s);
    Tensor* gp = t.grad_buffer(p);
    for (std::size_t n = 0; n < sv.rows(); ++n) {
      const double* sn = sv.row(n).data();
      const double* pn = pv.row(n).data();
      for (std::size_t k = 0; k < K; ++k) {
        const double gk = g(n, k);
        if (gs) {
          double* out = gs->row(n).data() + k * B;
          for (std::size_t b = 0; b < B; ++b) out[b] += gk * pn[b];
        }
        if (gp) {
          double* out = gp->row(n).data();
          for (std::size_t b = 0; b < B; ++b) out[b] += gk * sn[k * B + b];
        }
      }
    }
  });
}

// ---- whole-function helpers ------------------------------------------------------

ValueAndGrad value_and_grad(const LossFn& fn, std::span<const Tensor> params) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const Tensor& p : params) leaves.push_back(tape.parameter(p));
  Var loss = fn(tape, leaves);
  if (loss.value().size() != 1) throw ContractError("loss function must return a scalar, got " + loss.shape().str());
  tape.backward(loss);
  ValueAndGrad out;
  out.value = loss.value().item();
  out.grads.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor* g = tape.grad(leaves[i]);
    out.grads.push_back(g ? *g : Tensor(params[i].shape()));
  }
  return out;
}

double evaluate(const LossFn& fn, std::span<const Tensor> params) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const Tensor& p : params) leaves.push_back(tape.constant(p));
  Var loss = fn(tape, leaves);
  if (loss.value().size() != 1) throw ContractError("loss function must return a scalar, got " + loss.shape().str());
  return loss.value().item();
}

}  // namespace gfss::ad
