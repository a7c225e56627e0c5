// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gfss/head.hpp"
#include "gfss/numeric/autodiff.hpp"

namespace gfss {

enum class PriorSource { kTrainHistogram, kSupportMasks, kMerged };

/// Per-class pixel counts n_k over all K classes, each clamped to >= 1.
struct ClassPrior {
  std::vector<double> counts;
  PriorSource source = PriorSource::kMerged;
  /// Human-readable notes for classes whose count had to be clamped.
  std::vector<std::string> warnings;
};

/// Binary support mask (1 = novel pixel) labelled with its novel class id.
struct SupportMaskRef {
  std::span<const std::uint8_t> mask;
  std::size_t novel_class = 0;
};

/// Background and base counts come from the base-phase histogram (B entries);
/// novel counts are foreground pixel totals over the support masks.
ClassPrior estimate_class_prior(std::span<const double> train_histogram, std::span<const SupportMaskRef> support,
                                const ClassPartition& partition);

struct MarginVector {
  std::vector<double> deltas;
  double scale = 0.0;
};

/// delta_k = C / n_k^(1/4). Throws ContractError for C < 0.
MarginVector ldam_margins(const ClassPrior& prior, double C);

/// Mean over masked pixels of -log(e^(z_y - d_y) / (e^(z_y - d_y) + sum_{k != y} e^(z_k))).
/// `mask` selects supervised pixels (non-zero = used). Throws ContractError if
/// no pixel is selected or a selected label is out of range.
ad::Var ldam_loss(ad::Var logits, std::span<const std::size_t> labels, const MarginVector& margins,
                  std::span<const std::uint8_t> mask);

/// Non-negative weights summing to one.
struct ProportionVector {
  std::vector<double> values;

  static ProportionVector from(const Tensor& t);
  /// Throws ContractError unless entries are >= 0 and sum to 1 within 1e-9.
  void validate() const;
};

/// Clamps every entry to >= `floor` and renormalizes.
ProportionVector floor_proportions(const ProportionVector& pi, double floor = 1e-6);

/// Per-class mean of soft probabilities over all pixels: (N x K) -> (K).
ad::Var query_proportions(ad::Var probs);

/// sum_k p_k log(p_k / pi_k) with 0 log 0 = 0. `pi` is floored and treated as a constant.
ad::Var pi_regularizer(ad::Var proportions, const ProportionVector& pi);

/// pi^t: `initial` while t <= t_pi, then the snapshot taken at t_pi.
/// Throws ContractError for t > t_pi without a snapshot.
ProportionVector pi_schedule(std::size_t t, std::size_t t_pi, const ProportionVector& initial,
                             const std::optional<ProportionVector>& at_t_pi);

/// Folds novel mass into background: (N x K) -> (N x B).
ad::Var project_new2old(ad::Var probs, const ClassPartition& partition);
std::vector<double> project_new2old(std::span<const double> probs, const ClassPartition& partition);

/// Mean over pixels of KL(project_new2old(P) || P_frozen); `base_probs` is (N x B) and constant.
ad::Var kd_loss(ad::Var probs, const Tensor& base_probs, const ClassPartition& partition);

/// ldam + lambda * l_pi. Throws ContractError for lambda < 0.
ad::Var total_loss(ad::Var ldam, ad::Var l_pi, double lambda);

}  // namespace gfss
