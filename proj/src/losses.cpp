// SPDX-License-Identifier: Apache-2.0
#include "gfss/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "gfss/errors.hpp"

namespace gfss {

ClassPrior estimate_class_prior(std::span<const double> train_histogram, std::span<const SupportMaskRef> support,
                                const ClassPartition& partition) {
  partition.validate();
  if (train_histogram.size() != partition.base_side()) {
    throw ShapeError("train histogram must cover background + base classes (" + std::to_string(partition.base_side()) +
                     " entries), got " + std::to_string(train_histogram.size()));
  }
  ClassPrior prior;
  prior.source = PriorSource::kMerged;
  prior.counts.assign(partition.num_classes(), 0.0);
  std::copy(train_histogram.begin(), train_histogram.end(), prior.counts.begin());
  for (const SupportMaskRef& s : support) {
    if (!partition.is_novel(s.novel_class)) {
      throw ContractError("support mask labelled with non-novel class " + std::to_string(s.novel_class));
    }
    const auto fg = std::count_if(s.mask.begin(), s.mask.end(), [](std::uint8_t m) { return m != 0; });
    prior.counts[s.novel_class] += static_cast<double>(fg);
  }
  for (std::size_t k = 0; k < prior.counts.size(); ++k) {
    if (prior.counts[k] < 1.0) {
      prior.warnings.push_back("class " + std::to_string(k) + " has no pixels; count clamped to 1");
      prior.counts[k] = 1.0;
    }
  }
  return prior;
}

MarginVector ldam_margins(const ClassPrior& prior, double C) {
  if (!(C >= 0.0)) throw ContractError("LDAM scale C must be >= 0");
  MarginVector m;
  m.scale = C;
  m.deltas.reserve(prior.counts.size());
  for (double n : prior.counts) m.deltas.push_back(C / std::pow(n, 0.25));
  return m;
}

ad::Var ldam_loss(ad::Var logits, std::span<const std::size_t> labels, const MarginVector& margins,
                  std::span<const std::uint8_t> mask) {
  const Shape s = logits.shape();
  const std::size_t N = s.rows, K = s.cols;
  if (labels.size() != N || mask.size() != N) throw ShapeError("ldam_loss: labels/mask length must equal pixel count");
  if (margins.deltas.size() != K) throw ShapeError("ldam_loss: margin vector length must equal class count");

  std::vector<std::size_t> picked;
  for (std::size_t i = 0; i < N; ++i) {
    if (!mask[i]) continue;
    if (labels[i] >= K) throw ContractError("ldam_loss: label " + std::to_string(labels[i]) + " out of range");
    picked.push_back(i);
  }
  if (picked.empty()) throw ContractError("ldam_loss: no supervised pixels in mask");

  const std::size_t M = picked.size();
  Tensor shift(Shape::matrix(M, K));
  Tensor onehot(Shape::matrix(M, K));
  for (std::size_t i = 0; i < M; ++i) {
    const std::size_t y = labels[picked[i]];
    shift(i, y) = margins.deltas[y];
    onehot(i, y) = 1.0;
  }
  ad::Tape& tape = *logits.tape();
  ad::Var z = ad::gather_rows(logits, picked);
  ad::Var log_p = ad::log_softmax_rows(ad::sub(z, tape.constant(std::move(shift))));
  return ad::scale(ad::sum(ad::mul(log_p, tape.constant(std::move(onehot)))), -1.0 / static_cast<double>(M));
}

ProportionVector ProportionVector::from(const Tensor& t) { return ProportionVector{t.vec()}; }

void ProportionVector::validate() const {
  double s = 0.0;
  for (double v : values) {
    if (!(v >= 0.0)) throw ContractError("proportion entries must be non-negative");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-9) throw ContractError("proportions must sum to 1");
}

ProportionVector floor_proportions(const ProportionVector& pi, double floor) {
  ProportionVector out = pi;
  double s = 0.0;
  for (double& v : out.values) s += (v = std::max(v, floor));
  for (double& v : out.values) v /= s;
  return out;
}

ad::Var query_proportions(ad::Var probs) { return ad::mean_cols(probs); }

ad::Var pi_regularizer(ad::Var proportions, const ProportionVector& pi) {
  if (proportions.shape().numel() != pi.values.size()) throw ShapeError("pi_regularizer: length mismatch");
  const ProportionVector floored = floor_proportions(pi);
  Tensor log_pi(proportions.shape());
  for (std::size_t k = 0; k < floored.values.size(); ++k) log_pi[k] = std::log(floored.values[k]);
  ad::Var cross = ad::sum(ad::mul(proportions, proportions.tape()->constant(std::move(log_pi))));
  return ad::sub(ad::sum(ad::xlogx(proportions)), cross);
}

ProportionVector pi_schedule(std::size_t t, std::size_t t_pi, const ProportionVector& initial,
                             const std::optional<ProportionVector>& at_t_pi) {
  if (t <= t_pi) return initial;
  if (!at_t_pi) throw ContractError("pi_schedule: epoch past t_pi but no snapshot was recorded");
  return *at_t_pi;
}

namespace {

Tensor projection_matrix(const ClassPartition& partition) {
  const std::size_t K = partition.num_classes(), B = partition.base_side();
  Tensor p(Shape::matrix(K, B));
  for (std::size_t b = 0; b < B; ++b) p(b, b) = 1.0;
  for (std::size_t k = B; k < K; ++k) p(k, 0) = 1.0;
  return p;
}

}  // namespace

ad::Var project_new2old(ad::Var probs, const ClassPartition& partition) {
  if (probs.shape().rank != 2 || probs.shape().cols != partition.num_classes()) {
    throw ShapeError("project_new2old: expected N x " + std::to_string(partition.num_classes()) + ", got " +
                     probs.shape().str());
  }
  return ad::matmul(probs, probs.tape()->constant(projection_matrix(partition)));
}

std::vector<double> project_new2old(std::span<const double> probs, const ClassPartition& partition) {
  if (probs.size() != partition.num_classes()) throw ShapeError("project_new2old: length mismatch");
  std::vector<double> out(probs.begin(), probs.begin() + static_cast<std::ptrdiff_t>(partition.base_side()));
  for (std::size_t k = partition.base_side(); k < probs.size(); ++k) out[0] += probs[k];
  return out;
}

ad::Var kd_loss(ad::Var probs, const Tensor& base_probs, const ClassPartition& partition) {
  ad::Var q = project_new2old(probs, partition);
  require_same_shape(q.shape(), base_probs.shape(), "kd_loss");
  Tensor log_ref(base_probs.shape());
  for (std::size_t i = 0; i < base_probs.size(); ++i) {
    log_ref[i] = std::log(std::max(base_probs[i], std::numeric_limits<double>::min()));
  }
  ad::Tape& tape = *probs.tape();
  ad::Var kl = ad::sub(ad::sum(ad::xlogx(q)), ad::sum(ad::mul(q, tape.constant(std::move(log_ref)))));
  return ad::scale(kl, 1.0 / static_cast<double>(base_probs.rows()));
}

ad::Var total_loss(ad::Var ldam, ad::Var l_pi, double lambda) {
  if (!(lambda >= 0.0)) throw ContractError("lambda must be >= 0");
  return ad::add(ldam, ad::scale(l_pi, lambda));
}

}  // namespace gfss
