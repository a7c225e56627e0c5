// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "gfss/head.hpp"
#include "gfss/numeric/tensor.hpp"

// Synthetic episodes in feature space.
//
// Every class owns a unit-norm prototype in R^F; a pixel feature is its class
// prototype plus isotropic Gaussian noise. A novel class is placed at a chosen
// cosine similarity to an anchor base class. Images are H x W label maps whose
// class regions are contiguous runs in raster order with exact per-class pixel
// budgets; background fills whatever the budgets leave over. Generated
// features are rounded to float32 so that episodes survive a save/load cycle
// bit-exactly.

namespace gfss {

struct FeatureMap {
  std::size_t height = 0;
  std::size_t width = 0;
  Tensor features;  // (H*W) x F, row-major over pixels

  std::size_t pixels() const { return height * width; }
  std::size_t feature_dim() const { return features.cols(); }
};

struct NovelAnchor {
  std::size_t base_class = 1;  // 1..n_base
  double similarity = 0.0;     // cosine in [0, 1]
};

struct LongTailProfile {
  std::size_t head_budget = 96;
  double decay = 0.7;
};

/// round(head * decay^k) for k = 0..n-1, each at least 1.
std::vector<std::size_t> long_tail_budgets(std::size_t head, double decay, std::size_t n);

struct TaskSpec {
  std::size_t feature_dim = 32;
  std::size_t n_base = 4;
  std::size_t n_novel = 2;
  /// One entry per novel class; empty means novel j anchors to base class 1 + (j mod n_base) at similarity 0.
  std::vector<NovelAnchor> anchors;
  double noise_std = 0.1;
  std::size_t height = 24;
  std::size_t width = 24;
  /// Per-image budgets for [base 1..n_base, novel 1..n_novel] in query and base-phase images.
  LongTailProfile profile;
  /// Novel pixels per support image; 0 uses that class's profile budget.
  std::size_t support_novel_pixels = 0;
  /// Total support images, assigned to novel classes round-robin.
  std::size_t n_support_images = 4;
  std::size_t n_query_images = 4;
  std::size_t n_base_images = 8;
  std::uint64_t seed = 0;

  ClassPartition partition() const { return {n_base, n_novel}; }
  /// Throws ConfigError for invalid or infeasible settings.
  void validate() const;
  std::vector<NovelAnchor> resolved_anchors() const;
  /// Budgets for classes 1..K-1 in query/base images.
  std::vector<std::size_t> class_budgets() const;
};

struct SupportSample {
  FeatureMap map;
  std::vector<std::uint8_t> mask;  // 1 = novel pixel, 0 = background
  std::size_t novel_class = 0;
};

struct QuerySample {
  FeatureMap map;
  std::vector<std::size_t> labels;
};

struct BaseSample {
  FeatureMap map;
  std::vector<std::size_t> labels;       // novel pixels relabelled as background
  std::vector<std::size_t> true_labels;  // generator ground truth, for diagnostics only
};

struct Episode {
  ClassPartition partition;
  std::vector<SupportSample> support;
  std::vector<QuerySample> query;
  std::vector<double> train_histogram;  // background + base pixel counts of the base-phase set
};

struct BaseDataset {
  std::vector<BaseSample> images;
};

struct GeneratedTask {
  Episode episode;
  BaseDataset base;
  Tensor prototypes;  // K x F, row k is class k's prototype
};

GeneratedTask generate_task(const TaskSpec& spec);

struct BaseTrainConfig {
  std::size_t epochs = 300;
  double lr = 0.5;
  double momentum = 0.9;
  double init_std = 0.01;
  std::uint64_t seed = 0;
};

/// Linear background+base classifier trained with plain cross-entropy,
/// full-batch, on every base-phase pixel. Returns (1 + n_base) x F weights.
Tensor train_base_classifier(const BaseDataset& data, const ClassPartition& partition, const BaseTrainConfig& cfg);

/// Base-side histogram of a base-phase dataset (novel already folded into background).
std::vector<double> base_histogram(const BaseDataset& data, const ClassPartition& partition);

/// Stacks feature maps into one (sum of pixels) x F tensor.
Tensor stack_features(const std::vector<const FeatureMap*>& maps);

}  // namespace gfss
