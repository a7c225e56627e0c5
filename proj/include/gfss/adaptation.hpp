// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gfss/head.hpp"
#include "gfss/losses.hpp"
#include "gfss/metrics.hpp"
#include "gfss/synthgen.hpp"

namespace gfss {

enum class Arm {
  kTransition,     // both branches, no distillation
  kDistillation,   // classification branch + KD towards the frozen classifier
  kClassifierOnly  // classification branch alone
};

const char* arm_name(Arm arm);
/// Accepts "transition", "distillation-baseline" (or "distillation"), "classifier-only".
Arm parse_arm(const std::string& name);

struct AdaptationConfig {
  std::size_t epochs = 800;
  double lr = 0.01;
  double momentum = 0.9;
  double lambda = 1.0;
  double ldam_C = 0.5;
  std::size_t t_pi = 20;
  MergeConfig merge;
  Arm arm = Arm::kTransition;
  std::uint64_t seed = 0;
  std::size_t trace_every = 1;

  HeadInit init;
  /// Keep beta at its initial value (transition arm only).
  bool freeze_beta = false;
  /// Weight of the KD term in the distillation arm.
  double kd_weight = 1.0;

  /// Throws ConfigError on invalid settings.
  void validate() const;
};

struct TraceEntry {
  std::size_t epoch = 0;
  double total = 0.0;
  double ldam = 0.0;
  double l_pi = 0.0;
  double kd = 0.0;
  double support_miou = 0.0;  // percent, classes present in the support set
  double query_miou = 0.0;    // percent, classes present in the query set
  double query_base_miou = 0.0;
  double query_novel_miou = 0.0;
  std::vector<double> pi;  // target proportions used for this epoch's gradient
};

struct AdaptationTrace {
  std::vector<TraceEntry> entries;
};

struct AdaptationResult {
  HeadParams params;
  AdaptationTrace trace;
  ConfusionMatrix query_confusion;
  MetricsReport query_report;  // after the final update
  double support_miou = 0.0;
  ClassPrior prior;
  MarginVector margins;
  ProportionVector initial_pi;
  std::optional<ProportionVector> snapshot_pi;
};

/// Few-shot phase: full-batch SGD with momentum on
///   LDAM(support) + lambda * L_pi(query) [+ kd_weight * KD(query) for the distillation arm].
/// Query labels feed the trace and the final report only.
/// Throws ContractError for an empty support set and NumericalAbort when the
/// objective turns non-finite or exceeds 1e6.
AdaptationResult run_adaptation(const Episode& episode, const Tensor& w_base_frozen, const AdaptationConfig& cfg);

/// Query-set report of the frozen background+base classifier on its own.
MetricsReport frozen_classifier_report(const Episode& episode, const Tensor& w_base_frozen,
                                       const AggregateConfig& agg = {});

/// Query-set report for arbitrary head parameters.
MetricsReport evaluate_query(const Episode& episode, const HeadParams& params, const MergeConfig& merge,
                             bool use_transition, ConfusionMatrix* cm_out = nullptr);

}  // namespace gfss
