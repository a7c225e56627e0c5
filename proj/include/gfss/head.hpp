// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "gfss/numeric/autodiff.hpp"
#include "gfss/numeric/tensor.hpp"

// Two-branch segmentation head.
//
// Class index layout for every per-pixel vector: 0 = background,
// 1..n_base = base classes, n_base+1..n_base+n_novel = novel classes.
// The "base side" (background + base classes) has B = 1 + n_base entries and
// the full prediction has K = B + n_novel entries.
//
//   classification branch:  cat(W_base; W_novel) * v
//   transition branch:      S(v) * softmax(W_frozen * v)
//       S(v) = column-softmax(g_col(v) outer g_row(v) + beta),  S(v) is K x B
//   merge:                  cls + gamma * log(tr + eps)     (or cls + gamma * tr)
//   prediction:             row-softmax(merge)

namespace gfss {

struct ClassPartition {
  std::size_t n_base = 1;
  std::size_t n_novel = 1;

  /// Background plus base classes.
  std::size_t base_side() const { return 1 + n_base; }
  std::size_t num_classes() const { return 1 + n_base + n_novel; }
  bool is_base(std::size_t k) const { return k >= 1 && k <= n_base; }
  bool is_novel(std::size_t k) const { return k > n_base && k < num_classes(); }
  /// Class id of the j-th novel class, j in [0, n_novel).
  std::size_t novel_class(std::size_t j) const { return 1 + n_base + j; }

  /// Throws ContractError unless n_base >= 1 and n_novel >= 1.
  void validate() const;
  bool operator==(const ClassPartition&) const = default;
};

/// One hidden layer: out = W2 * tanh(W1 * x + b1) + b2.
struct MlpParams {
  Tensor w1;  // hidden x F
  Tensor b1;  // hidden
  Tensor w2;  // out x hidden
  Tensor b2;  // out

  std::size_t in_dim() const { return w1.cols(); }
  std::size_t out_dim() const { return w2.rows(); }
};

struct HeadParams {
  ClassPartition partition;
  Tensor w_base_frozen;  // B x F, never updated after base training
  Tensor w_base;         // B x F
  Tensor w_novel;        // n_novel x F
  MlpParams row_mlp;     // F -> B
  MlpParams col_mlp;     // F -> K
  Tensor beta;           // K x B

  std::size_t feature_dim() const { return w_base_frozen.cols(); }
  /// Throws ShapeError when any block disagrees with the partition or F.
  void validate() const;
};

/// Which parameter groups an optimizer may update.
struct TrainableSet {
  bool w_base = true;
  bool w_novel = true;
  bool mlps = true;
  bool beta = true;

  static TrainableSet classifier_only() { return {true, true, false, false}; }
};

struct HeadInit {
  /// Hidden width of both MLPs; 0 selects max(1, F / 4).
  std::size_t hidden = 0;
  /// Diagonal of beta's base-to-base block.
  double kappa = 4.0;
  double novel_std = 0.01;
  /// Std of the MLP output layer, small so that S(v) starts close to softmax(beta).
  double mlp_out_std = 0.01;
};

/// W_base starts as a copy of W_frozen, W_novel ~ N(0, novel_std^2), beta's
/// base-to-base block = kappa * I and zero elsewhere.
HeadParams init_head(const Tensor& w_base_frozen, const ClassPartition& partition, const HeadInit& init,
                     std::mt19937_64& rng);

enum class MergeMode { kLogProbSum, kRawSum };

struct MergeConfig {
  MergeMode mode = MergeMode::kLogProbSum;
  double gamma = 1.0;
  double epsilon = 1e-8;

  /// Throws ContractError unless gamma >= 0 and epsilon in (0, 1e-3].
  void validate() const;
};

/// Per-pixel K x B column-stochastic matrix.
struct TransitionMatrix {
  Tensor values;

  std::size_t rows() const { return values.rows(); }
  std::size_t cols() const { return values.cols(); }
};

// ---- differentiable forms ----------------------------------------------------

struct MlpVars {
  ad::Var w1, b1, w2, b2;
};

struct HeadVars {
  ad::Var w_base_frozen;
  ad::Var w_base;
  ad::Var w_novel;
  MlpVars row_mlp;
  MlpVars col_mlp;
  ad::Var beta;
};

/// Places the head on `tape`; groups outside `trainable` become constants.
/// The frozen classifier is always a constant.
HeadVars bind_head(ad::Tape& tape, const HeadParams& params, const TrainableSet& trainable);

/// (N x F) -> (N x out)
ad::Var mlp_forward(ad::Var features, const MlpVars& mlp);
/// (N x F) -> (N x K)
ad::Var classification_logits(ad::Var features, ad::Var w_base, ad::Var w_novel);
/// (N x F) -> (N x K*B), each row a flattened column-stochastic K x B matrix.
ad::Var transition_matrices(ad::Var features, const MlpVars& row_mlp, const MlpVars& col_mlp, ad::Var beta);
/// (N x F) -> (N x K) probability rows.
ad::Var transition_logits(ad::Var features, ad::Var w_base_frozen, const MlpVars& row_mlp, const MlpVars& col_mlp,
                          ad::Var beta);
ad::Var merge_logits(ad::Var cls_logits, ad::Var tr_probs, const MergeConfig& cfg);

struct HeadOutputs {
  ad::Var cls_logits;
  ad::Var tr_probs;  // empty when the transition branch is disabled
  ad::Var logits;
  ad::Var probs;
};

/// Full forward pass. With `use_transition` false the branch is not built and
/// logits = classification logits.
HeadOutputs forward_head(const HeadVars& head, ad::Var features, const MergeConfig& merge, bool use_transition);

// ---- plain tensor forms --------------------------------------------------------

Tensor classification_logits(const Tensor& features, const Tensor& w_base, const Tensor& w_novel);
TransitionMatrix transition_matrix_at(const Tensor& feature, const MlpParams& row_mlp, const MlpParams& col_mlp,
                                      const Tensor& beta);
Tensor transition_logits(const Tensor& features, const HeadParams& params);
Tensor merge_logits(const Tensor& cls_logits, const Tensor& tr_probs, const MergeConfig& cfg);
/// Row-softmax of the merged logits; (N x K), rows on the simplex.
Tensor predict(const Tensor& features, const HeadParams& params, const MergeConfig& merge, bool use_transition = true);
/// Per-pixel argmax of `predict`.
std::vector<std::size_t> predict_labels(const Tensor& features, const HeadParams& params, const MergeConfig& merge,
                                        bool use_transition = true);
/// Pixel-averaged transition matrix over a feature set.
TransitionMatrix mean_transition_matrix(const Tensor& features, const HeadParams& params);

std::vector<std::size_t> argmax_rows(const Tensor& t);

}  // namespace gfss
