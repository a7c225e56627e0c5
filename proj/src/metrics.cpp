// SPDX-License-Identifier: Apache-2.0
#include "gfss/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "gfss/errors.hpp"

namespace gfss {

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

std::uint64_t ConfusionMatrix::gt_count(std::size_t k) const {
  std::uint64_t s = 0;
  for (std::size_t j = 0; j < k_; ++j) s += at(k, j);
  return s;
}

std::uint64_t ConfusionMatrix::pred_count(std::size_t k) const {
  std::uint64_t s = 0;
  for (std::size_t i = 0; i < k_; ++i) s += at(i, k);
  return s;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw ShapeError("confusion matrices of different class counts");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

void confusion_accumulate(ConfusionMatrix& cm, std::span<const std::size_t> pred, std::span<const std::size_t> gt,
                          std::size_t ignore_label) {
  if (pred.size() != gt.size()) throw ShapeError("confusion_accumulate: prediction and ground truth lengths differ");
  const std::size_t K = cm.num_classes();
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == ignore_label) continue;
    if (gt[i] >= K) throw DataError("ground-truth label " + std::to_string(gt[i]) + " out of range");
    if (pred[i] >= K) throw DataError("predicted label " + std::to_string(pred[i]) + " out of range");
    ++cm.at(gt[i], pred[i]);
  }
}

ConfusionMatrix confusion_accumulate(std::span<const std::size_t> pred, std::span<const std::size_t> gt,
                                     std::size_t num_classes, std::size_t ignore_label) {
  ConfusionMatrix cm(num_classes);
  confusion_accumulate(cm, pred, gt, ignore_label);
  return cm;
}

std::vector<std::optional<double>> iou_per_class(const ConfusionMatrix& cm) {
  std::vector<std::optional<double>> out(cm.num_classes());
  for (std::size_t k = 0; k < cm.num_classes(); ++k) {
    const std::uint64_t tp = cm.at(k, k);
    const std::uint64_t uni = cm.gt_count(k) + cm.pred_count(k) - tp;
    if (uni > 0) out[k] = static_cast<double>(tp) / static_cast<double>(uni);
  }
  return out;
}

double mean_iou(const ConfusionMatrix& cm) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& v : iou_per_class(cm)) {
    if (v) {
      s += *v;
      ++n;
    }
  }
  return n ? s / static_cast<double>(n) : 0.0;
}

MetricsReport aggregate(std::span<const std::optional<double>> per_class_iou, const ClassPartition& partition,
                        const AggregateConfig& cfg) {
  if (per_class_iou.size() != partition.num_classes()) throw ShapeError("aggregate: per-class IoU does not cover partition");
  MetricsReport r;
  r.per_class_iou.assign(per_class_iou.begin(), per_class_iou.end());

  double base_sum = 0.0;
  std::size_t base_n = 0;
  for (std::size_t k = cfg.include_background_in_base ? 0 : 1; k < partition.base_side(); ++k) {
    if (per_class_iou[k]) {
      base_sum += *per_class_iou[k];
      ++base_n;
    }
  }
  double novel_sum = 0.0;
  for (std::size_t j = 0; j < partition.n_novel; ++j) novel_sum += per_class_iou[partition.novel_class(j)].value_or(0.0);

  r.base_miou = base_n ? base_sum / static_cast<double>(base_n) : 0.0;
  r.novel_miou = novel_sum / static_cast<double>(partition.n_novel);
  r.average_miou = 0.5 * (r.base_miou + r.novel_miou);
  r.weighted_miou = cfg.base_weight * r.base_miou + cfg.novel_weight * r.novel_miou;
  return r;
}

MetricsReport report_from_confusion(const ConfusionMatrix& cm, const ClassPartition& partition,
                                    const AggregateConfig& cfg) {
  auto iou = iou_per_class(cm);
  for (auto& v : iou)
    if (v) *v *= 100.0;
  MetricsReport r = aggregate(iou, partition, cfg);
  r.pixel_counts.resize(cm.num_classes());
  for (std::size_t k = 0; k < cm.num_classes(); ++k) r.pixel_counts[k] = cm.gt_count(k);
  return r;
}

std::vector<HeatmapCell> export_heatmap(const TransitionMatrix& mean_transition) {
  std::vector<HeatmapCell> cells;
  cells.reserve(mean_transition.values.size());
  for (std::size_t r = 0; r < mean_transition.rows(); ++r)
    for (std::size_t c = 0; c < mean_transition.cols(); ++c) cells.push_back({r, c, mean_transition.values(r, c)});
  return cells;
}

std::string heatmap_to_csv(std::span<const HeatmapCell> cells, const std::string& preamble) {
  std::string out = preamble;
  out += "row_class,col_class,value\n";
  char buf[64];
  for (const auto& c : cells) {
    std::snprintf(buf, sizeof buf, "%.17g", c.value);
    out += std::to_string(c.row_class) + "," + std::to_string(c.col_class) + "," + buf + "\n";
  }
  return out;
}

std::vector<HeatmapCell> heatmap_from_csv(const std::string& text) {
  std::vector<HeatmapCell> cells;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("row_class", 0) == 0) continue;
    HeatmapCell c;
    char comma1 = 0, comma2 = 0;
    std::istringstream ls(line);
    if (!(ls >> c.row_class >> comma1 >> c.col_class >> comma2 >> c.value) || comma1 != ',' || comma2 != ',') {
      throw DataError("malformed heatmap line: " + line);
    }
    cells.push_back(c);
  }
  return cells;
}

TransitionMatrix heatmap_to_matrix(std::span<const HeatmapCell> cells) {
  std::size_t rows = 0, cols = 0;
  for (const auto& c : cells) {
    rows = std::max(rows, c.row_class + 1);
    cols = std::max(cols, c.col_class + 1);
  }
  Tensor t(Shape::matrix(rows, cols));
  for (const auto& c : cells) t(c.row_class, c.col_class) = c.value;
  return TransitionMatrix{std::move(t)};
}

}  // namespace gfss
