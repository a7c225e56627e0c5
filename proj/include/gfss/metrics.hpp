// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gfss/head.hpp"

namespace gfss {

inline constexpr std::size_t kIgnoreLabel = 0xFFFF;

/// K x K pixel counts, rows = ground truth, columns = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes = 0) : k_(num_classes), counts_(num_classes * num_classes, 0) {}

  std::size_t num_classes() const { return k_; }
  std::uint64_t at(std::size_t gt, std::size_t pred) const { return counts_[gt * k_ + pred]; }
  std::uint64_t& at(std::size_t gt, std::size_t pred) { return counts_[gt * k_ + pred]; }
  std::uint64_t total() const;
  std::uint64_t gt_count(std::size_t k) const;
  std::uint64_t pred_count(std::size_t k) const;

  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t k_;
  std::vector<std::uint64_t> counts_;
};

/// Adds one count per non-ignored pixel. Throws DataError for a label that is
/// neither in [0, K) nor `ignore_label`.
void confusion_accumulate(ConfusionMatrix& cm, std::span<const std::size_t> pred, std::span<const std::size_t> gt,
                          std::size_t ignore_label = kIgnoreLabel);
ConfusionMatrix confusion_accumulate(std::span<const std::size_t> pred, std::span<const std::size_t> gt,
                                     std::size_t num_classes, std::size_t ignore_label = kIgnoreLabel);

/// IoU_k = tp / (gt_k + pred_k - tp) in [0, 1]; nullopt when the union is empty.
std::vector<std::optional<double>> iou_per_class(const ConfusionMatrix& cm);
/// Mean over classes with a non-empty union.
double mean_iou(const ConfusionMatrix& cm);

struct AggregateConfig {
  double base_weight = 0.4;
  double novel_weight = 0.6;
  bool include_background_in_base = false;
};

struct MetricsReport {
  std::vector<std::optional<double>> per_class_iou;
  std::vector<std::uint64_t> pixel_counts;
  double base_miou = 0.0;
  double novel_miou = 0.0;
  double average_miou = 0.0;
  double weighted_miou = 0.0;
};

/// Base mean skips absent classes; an absent novel class counts as 0.
/// Scale-agnostic: the means come out in the units of `per_class_iou`.
MetricsReport aggregate(std::span<const std::optional<double>> per_class_iou, const ClassPartition& partition,
                        const AggregateConfig& cfg = {});

/// Report in percentage points built from a confusion matrix.
MetricsReport report_from_confusion(const ConfusionMatrix& cm, const ClassPartition& partition,
                                    const AggregateConfig& cfg = {});

struct HeatmapCell {
  std::size_t row_class = 0;
  std::size_t col_class = 0;
  double value = 0.0;
};

std::vector<HeatmapCell> export_heatmap(const TransitionMatrix& mean_transition);
/// `row,col,value` lines preceded by a header; values printed round-trip exact.
std::string heatmap_to_csv(std::span<const HeatmapCell> cells, const std::string& preamble = {});
/// Parses heatmap_to_csv output; '#' lines and the header are skipped.
std::vector<HeatmapCell> heatmap_from_csv(const std::string& text);
TransitionMatrix heatmap_to_matrix(std::span<const HeatmapCell> cells);

}  // namespace gfss
