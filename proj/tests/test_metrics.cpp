// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "generators.hpp"
#include "gfss/errors.hpp"
#include "gfss/metrics.hpp"

using namespace gfss;

TEST_CASE("confusion counting") {
  std::vector<std::size_t> gt{0, 0, 1, 1}, pred{0, 1, 1, 1};
  ConfusionMatrix cm = confusion_accumulate(pred, gt, 2);
  CHECK(cm.at(0, 0) == 1);
  CHECK(cm.at(0, 1) == 1);
  CHECK(cm.at(1, 0) == 0);
  CHECK(cm.at(1, 1) == 2);

  ConfusionMatrix perfect = confusion_accumulate(gt, gt, 2);
  CHECK(perfect.at(0, 1) + perfect.at(1, 0) == 0);

  std::vector<std::size_t> ignored(4, kIgnoreLabel);
  CHECK(confusion_accumulate(pred, ignored, 2).total() == 0);
  std::vector<std::size_t> bad{0, 0, 5, 1};
  CHECK_THROWS_AS(confusion_accumulate(pred, bad, 2), DataError);
}

TEST_CASE("IoU per class") {
  ConfusionMatrix cm(2);
  cm.at(0, 0) = 1;
  cm.at(0, 1) = 1;
  cm.at(1, 1) = 2;
  auto iou = iou_per_class(cm);
  CHECK(*iou[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(*iou[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

  ConfusionMatrix diag(3);
  diag.at(0, 0) = 4;
  diag.at(2, 2) = 1;
  auto d = iou_per_class(diag);
  CHECK(*d[0] == 1.0);
  CHECK(!d[1].has_value());
  CHECK(mean_iou(diag) == 1.0);
}

TEST_CASE("base/novel aggregation reproduces published table rows") {
  const ClassPartition two{1, 1};
  struct Row {
    double base, novel, average, weighted;
  };
  for (Row r : {Row{37.41, 4.13, 20.77, 17.44}, Row{55.46, 21.71, 38.58, 35.21}, Row{37.37, 10.19, 23.78, 21.06}}) {
    std::vector<std::optional<double>> iou{std::nullopt, r.base, r.novel};
    MetricsReport m = aggregate(iou, two);
    CHECK(std::abs(m.average_miou - r.average) <= 0.01);
    CHECK(std::abs(m.weighted_miou - r.weighted) <= 0.01);
  }
}

TEST_CASE("absent novel class counts as zero, absent base class is skipped") {
  const ClassPartition part{2, 2};
  std::vector<std::optional<double>> iou{0.9, 0.8, std::nullopt, 0.6, std::nullopt};
  MetricsReport m = aggregate(iou, part);
  CHECK(m.base_miou == doctest::Approx(0.8));
  CHECK(m.novel_miou == doctest::Approx(0.3));
}

TEST_CASE("property: confusion totals and IoU range") {
  testgen::Gen g(31);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t K = g.size(2, 6), n = g.size(1, 40);
    auto gt = g.labels(n, K), pred = g.labels(n, K);
    ConfusionMatrix cm = confusion_accumulate(pred, gt, K);
    CHECK(cm.total() == n);
    for (const auto& v : iou_per_class(cm))
      if (v) CHECK((*v >= 0.0 && *v <= 1.0));
    ConfusionMatrix half = confusion_accumulate(std::span(pred).first(n / 2), std::span(gt).first(n / 2), K);
    half += confusion_accumulate(std::span(pred).subspan(n / 2), std::span(gt).subspan(n / 2), K);
    CHECK(half == cm);
  }
}

TEST_CASE("heatmap export") {
  TransitionMatrix id{Tensor::from_rows({{0.9, 0.05}, {0.05, 0.9}, {0.05, 0.05}})};
  auto cells = export_heatmap(id);
  CHECK(cells.size() == 6);
  for (std::size_t b = 0; b < 2; ++b) {
    double best = -1;
    std::size_t arg = 0;
    for (const auto& c : cells)
      if (c.col_class == b && c.value > best) best = c.value, arg = c.row_class;
    CHECK(arg == b);
  }
  TransitionMatrix uni{Tensor::filled(Shape::matrix(4, 3), 0.25)};
  for (const auto& c : export_heatmap(uni)) CHECK(c.value == 0.25);

  testgen::Gen g(32);
  TransitionMatrix rnd{ad::softmax_cols(g.matrix(5, 3))};
  auto back = heatmap_to_matrix(heatmap_from_csv(heatmap_to_csv(export_heatmap(rnd), "# provenance\n")));
  CHECK(max_abs_diff(back.values, rnd.values) <= 1e-9);
}
