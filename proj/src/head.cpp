// SPDX-License-Identifier: Apache-2.0
#include "gfss/head.hpp"

#include <algorithm>
#include <cmath>

#include "gfss/errors.hpp"

namespace gfss {

void ClassPartition::validate() const {
  if (n_base < 1 || n_novel < 1) throw ContractError("class partition needs at least one base and one novel class");
}

namespace {

void expect_shape(const Tensor& t, Shape s, const char* what) {
  if (!(t.shape() == s)) throw ShapeError(std::string(what) + ": expected " + s.str() + ", got " + t.shape().str());
}

void validate_mlp(const MlpParams& m, std::size_t in, std::size_t out, const char* what) {
  const std::size_t hidden = m.w1.rows();
  expect_shape(m.w1, Shape::matrix(hidden, in), what);
  expect_shape(m.b1, Shape::vector(hidden), what);
  expect_shape(m.w2, Shape::matrix(out, hidden), what);
  expect_shape(m.b2, Shape::vector(out), what);
}

Tensor gaussian(Shape shape, double stddev, std::mt19937_64& rng) {
  Tensor t(shape);
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

MlpParams init_mlp(std::size_t in, std::size_t hidden, std::size_t out, double out_std, std::mt19937_64& rng) {
  MlpParams m;
  m.w1 = gaussian(Shape::matrix(hidden, in), 1.0 / std::sqrt(static_cast<double>(in)), rng);
  m.b1 = Tensor(Shape::vector(hidden));
  m.w2 = gaussian(Shape::matrix(out, hidden), out_std, rng);
  m.b2 = Tensor(Shape::vector(out));
  return m;
}

MlpVars bind_mlp(ad::Tape& tape, const MlpParams& m, bool trainable) {
  auto leaf = [&](const Tensor& t) { return trainable ? tape.parameter(t) : tape.constant(t); };
  return {leaf(m.w1), leaf(m.b1), leaf(m.w2), leaf(m.b2)};
}

}  // namespace

void HeadParams::validate() const {
  partition.validate();
  const std::size_t F = feature_dim();
  const std::size_t B = partition.base_side();
  const std::size_t K = partition.num_classes();
  expect_shape(w_base_frozen, Shape::matrix(B, F), "W_frozen");
  expect_shape(w_base, Shape::matrix(B, F), "W_base");
  expect_shape(w_novel, Shape::matrix(partition.n_novel, F), "W_novel");
  validate_mlp(row_mlp, F, B, "row MLP");
  validate_mlp(col_mlp, F, K, "column MLP");
  expect_shape(beta, Shape::matrix(K, B), "beta");
}

HeadParams init_head(const Tensor& w_base_frozen, const ClassPartition& partition, const HeadInit& init,
                     std::mt19937_64& rng) {
  partition.validate();
  if (w_base_frozen.rank() != 2 || w_base_frozen.rows() != partition.base_side()) {
    throw ShapeError("frozen classifier must have 1 + n_base rows, got " + w_base_frozen.shape().str());
  }
  const std::size_t F = w_base_frozen.cols();
  const std::size_t B = partition.base_side();
  const std::size_t K = partition.num_classes();
  const std::size_t hidden = init.hidden ? init.hidden : std::max<std::size_t>(1, F / 4);

  HeadParams p;
  p.partition = partition;
  p.w_base_frozen = w_base_frozen;
  p.w_base = w_base_frozen;
  p.w_novel = gaussian(Shape::matrix(partition.n_novel, F), init.novel_std, rng);
  p.row_mlp = init_mlp(F, hidden, B, init.mlp_out_std, rng);
  p.col_mlp = init_mlp(F, hidden, K, init.mlp_out_std, rng);
  p.beta = Tensor(Shape::matrix(K, B));
  for (std::size_t b = 0; b < B; ++b) p.beta(b, b) = init.kappa;
  return p;
}

void MergeConfig::validate() const {
  if (!(gamma >= 0.0)) throw ContractError("merge gamma must be >= 0");
  if (!(epsilon > 0.0 && epsilon <= 1e-3)) throw ContractError("merge epsilon must lie in (0, 1e-3]");
}

// ---- differentiable forms ----------------------------------------------------

HeadVars bind_head(ad::Tape& tape, const HeadParams& params, const TrainableSet& trainable) {
  params.validate();
  HeadVars v;
  v.w_base_frozen = tape.constant(params.w_base_frozen);
  v.w_base = trainable.w_base ? tape.parameter(params.w_base) : tape.constant(params.w_base);
  v.w_novel = trainable.w_novel ? tape.parameter(params.w_novel) : tape.constant(params.w_novel);
  v.row_mlp = bind_mlp(tape, params.row_mlp, trainable.mlps);
  v.col_mlp = bind_mlp(tape, params.col_mlp, trainable.mlps);
  v.beta = trainable.beta ? tape.parameter(params.beta) : tape.constant(params.beta);
  return v;
}

ad::Var mlp_forward(ad::Var features, const MlpVars& mlp) {
  ad::Var hidden = ad::tanh(ad::add_row_vector(ad::matmul_nt(features, mlp.w1), mlp.b1));
  return ad::add_row_vector(ad::matmul_nt(hidden, mlp.w2), mlp.b2);
}

ad::Var classification_logits(ad::Var features, ad::Var w_base, ad::Var w_novel) {
  return ad::matmul_nt(features, ad::concat_rows(w_base, w_novel));
}

ad::Var transition_matrices(ad::Var features, const MlpVars& row_mlp, const MlpVars& col_mlp, ad::Var beta) {
  const Shape bs = beta.shape();
  ad::Var cols = mlp_forward(features, col_mlp);  // N x K
  ad::Var rows = mlp_forward(features, row_mlp);  // N x B
  if (cols.shape().cols != bs.rows || rows.shape().cols != bs.cols) {
    throw ShapeError("MLP output widths do not match beta " + bs.str());
  }
  ad::Var raw = ad::add_row_vector(ad::row_outer(cols, rows), ad::reshape(beta, Shape::vector(bs.numel())));
  return ad::block_softmax_cols(raw, bs.rows);
}

ad::Var transition_logits(ad::Var features, ad::Var w_base_frozen, const MlpVars& row_mlp, const MlpVars& col_mlp,
                          ad::Var beta) {
  ad::Var base_posterior = ad::softmax_rows(ad::matmul_nt(features, w_base_frozen));
  return ad::row_matvec(transition_matrices(features, row_mlp, col_mlp, beta), base_posterior);
}

ad::Var merge_logits(ad::Var cls_logits, ad::Var tr_probs, const MergeConfig& cfg) {
  cfg.validate();
  require_same_shape(cls_logits.shape(), tr_probs.shape(), "merge_logits");
  if (cfg.mode == MergeMode::kRawSum) return ad::add(cls_logits, ad::scale(tr_probs, cfg.gamma));
  return ad::add(cls_logits, ad::scale(ad::log(ad::add_scalar(tr_probs, cfg.epsilon)), cfg.gamma));
}

HeadOutputs forward_head(const HeadVars& head, ad::Var features, const MergeConfig& merge, bool use_transition) {
  HeadOutputs out;
  out.cls_logits = classification_logits(features, head.w_base, head.w_novel);
  if (use_transition) {
    out.tr_probs = transition_logits(features, head.w_base_frozen, head.row_mlp, head.col_mlp, head.beta);
    out.logits = merge_logits(out.cls_logits, out.tr_probs, merge);
  } else {
    out.logits = out.cls_logits;
  }
  out.probs = ad::softmax_rows(out.logits);
  return out;
}

// ---- plain tensor forms --------------------------------------------------------

Tensor classification_logits(const Tensor& features, const Tensor& w_base, const Tensor& w_novel) {
  ad::Tape tape;
  return classification_logits(tape.constant(features), tape.constant(w_base), tape.constant(w_novel)).value();
}

TransitionMatrix transition_matrix_at(const Tensor& feature, const MlpParams& row_mlp, const MlpParams& col_mlp,
                                      const Tensor& beta) {
  if (feature.rank() != 1) throw ShapeError("transition_matrix_at expects a feature vector, got " + feature.shape().str());
  validate_mlp(row_mlp, feature.size(), beta.cols(), "row MLP");
  validate_mlp(col_mlp, feature.size(), beta.rows(), "column MLP");
  ad::Tape tape;
  ad::Var x = tape.constant(feature.reshaped(Shape::matrix(1, feature.size())));
  ad::Var g_col = ad::reshape(mlp_forward(x, bind_mlp(tape, col_mlp, false)), Shape::vector(beta.rows()));
  ad::Var g_row = ad::reshape(mlp_forward(x, bind_mlp(tape, row_mlp, false)), Shape::vector(beta.cols()));
  ad::Var raw = ad::add(ad::outer(g_col, g_row), tape.constant(beta));
  return TransitionMatrix{ad::softmax_cols(raw).value()};
}

Tensor transition_logits(const Tensor& features, const HeadParams& params) {
  ad::Tape tape;
  HeadVars v = bind_head(tape, params, TrainableSet{false, false, false, false});
  return transition_logits(tape.constant(features), v.w_base_frozen, v.row_mlp, v.col_mlp, v.beta).value();
}

Tensor merge_logits(const Tensor& cls_logits, const Tensor& tr_probs, const MergeConfig& cfg) {
  ad::Tape tape;
  return merge_logits(tape.constant(cls_logits), tape.constant(tr_probs), cfg).value();
}

Tensor predict(const Tensor& features, const HeadParams& params, const MergeConfig& merge, bool use_transition) {
  ad::Tape tape;
  HeadVars v = bind_head(tape, params, TrainableSet{false, false, false, false});
  return forward_head(v, tape.constant(features), merge, use_transition).probs.value();
}

std::vector<std::size_t> predict_labels(const Tensor& features, const HeadParams& params, const MergeConfig& merge,
                                        bool use_transition) {
  return argmax_rows(predict(features, params, merge, use_transition));
}

TransitionMatrix mean_transition_matrix(const Tensor& features, const HeadParams& params) {
  ad::Tape tape;
  HeadVars v = bind_head(tape, params, TrainableSet{false, false, false, false});
  const Tensor& per_pixel = transition_matrices(tape.constant(features), v.row_mlp, v.col_mlp, v.beta).value();
  Tensor mean(Shape::matrix(params.beta.rows(), params.beta.cols()));
  for (std::size_t n = 0; n < per_pixel.rows(); ++n) {
    auto row = per_pixel.row(n);
    for (std::size_t i = 0; i < row.size(); ++i) mean[i] += row[i];
  }
  const double inv = per_pixel.rows() ? 1.0 / static_cast<double>(per_pixel.rows()) : 0.0;
  for (double& x : mean.data()) x *= inv;
  return TransitionMatrix{std::move(mean)};
}

std::vector<std::size_t> argmax_rows(const Tensor& t) {
  std::vector<std::size_t> out(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    auto row = t.row(r);
    out[r] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

}  // namespace gfss
