// SPDX-License-Identifier: Apache-2.0
#include "gfss/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "gfss/errors.hpp"
#include "gfss/losses.hpp"
#include "gfss/optim.hpp"

namespace gfss {

std::vector<std::size_t> long_tail_budgets(std::size_t head, double decay, std::size_t n) {
  std::vector<std::size_t> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double v = static_cast<double>(head) * std::pow(decay, static_cast<double>(k));
    out[k] = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(v)));
  }
  return out;
}

void TaskSpec::validate() const {
  if (feature_dim < 2) throw ConfigError("feature_dim must be >= 2");
  if (n_base < 1 || n_novel < 1) throw ConfigError("n_base and n_novel must be >= 1");
  if (height < 1 || width < 1) throw ConfigError("image size must be positive");
  if (n_support_images < n_novel) throw ConfigError("need at least one support image per novel class");
  if (n_query_images < 1 || n_base_images < 1) throw ConfigError("image counts must be >= 1");
  if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be >= 0");
  if (profile.head_budget < 1 || !(profile.decay > 0.0 && profile.decay <= 1.0)) {
    throw ConfigError("long-tail profile needs head_budget >= 1 and decay in (0, 1]");
  }
  if (!anchors.empty() && anchors.size() != n_novel) throw ConfigError("anchors must list one entry per novel class");
  for (const auto& a : anchors) {
    if (a.base_class < 1 || a.base_class > n_base) throw ConfigError("anchor base class out of range");
    if (!(a.similarity >= 0.0 && a.similarity <= 1.0)) throw ConfigError("anchor similarity must lie in [0, 1]");
  }
  const auto budgets = class_budgets();
  const std::size_t used = std::accumulate(budgets.begin(), budgets.end(), std::size_t{0});
  if (used >= height * width) {
    throw ConfigError("infeasible pixel budget: classes need " + std::to_string(used) + " pixels but an image has " +
                      std::to_string(height * width) + " (background needs at least one)");
  }
  if (support_novel_pixels >= height * width) throw ConfigError("support_novel_pixels does not fit in an image");
}

std::vector<NovelAnchor> TaskSpec::resolved_anchors() const {
  if (!anchors.empty()) return anchors;
  std::vector<NovelAnchor> out(n_novel);
  for (std::size_t j = 0; j < n_novel; ++j) out[j] = {1 + j % n_base, 0.0};
  return out;
}

std::vector<std::size_t> TaskSpec::class_budgets() const {
  return long_tail_budgets(profile.head_budget, profile.decay, n_base + n_novel);
}

namespace {

// Independent stream per generator section so that changing one image count
// does not reshuffle the others.
std::mt19937_64 stream(std::uint64_t seed, std::uint64_t section) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(section)};
  return std::mt19937_64(seq);
}

std::vector<double> random_unit(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(dim);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (double& x : v) {
      x = n(rng);
      norm += x * x;
    }
  } while (norm < 1e-12);
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

Tensor make_prototypes(const TaskSpec& spec, std::mt19937_64& rng) {
  const ClassPartition part = spec.partition();
  const std::size_t F = spec.feature_dim;
  Tensor protos(Shape::matrix(part.num_classes(), F));
  for (std::size_t k = 0; k < part.base_side(); ++k) {
    auto v = random_unit(F, rng);
    std::copy(v.begin(), v.end(), protos.row(k).begin());
  }
  const auto anchors = spec.resolved_anchors();
  for (std::size_t j = 0; j < part.n_novel; ++j) {
    auto a = protos.row(anchors[j].base_class);
    auto u = random_unit(F, rng);
    for (int pass = 0; pass < 2; ++pass) {  // second pass removes rounding residue
      double d = 0.0;
      for (std::size_t i = 0; i < F; ++i) d += u[i] * a[i];
      for (std::size_t i = 0; i < F; ++i) u[i] -= d * a[i];
    }
    double norm = 0.0;
    for (double x : u) norm += x * x;
    norm = std::sqrt(norm);
    const double s = anchors[j].similarity;
    const double c = std::sqrt(std::max(0.0, 1.0 - s * s));
    auto out = protos.row(part.novel_class(j));
    for (std::size_t i = 0; i < F; ++i) out[i] = s * a[i] + c * u[i] / norm;
  }
  return protos;
}

/// Raster-order layout: non-background regions in random order, separated by
/// random-length background runs.
std::vector<std::size_t> layout(std::size_t pixels, const std::vector<std::pair<std::size_t, std::size_t>>& regions,
                                std::mt19937_64& rng) {
  std::vector<std::pair<std::size_t, std::size_t>> order = regions;
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t used = 0;
  for (const auto& r : order) used += r.second;
  const std::size_t bg_total = pixels - used;

  std::uniform_int_distribution<std::size_t> cut(0, bg_total);
  std::vector<std::size_t> cuts(order.size());
  for (auto& c : cuts) c = cut(rng);
  std::sort(cuts.begin(), cuts.end());

  std::vector<std::size_t> labels;
  labels.reserve(pixels);
  std::size_t prev = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    labels.insert(labels.end(), cuts[i] - prev, 0);
    prev = cuts[i];
    labels.insert(labels.end(), order[i].second, order[i].first);
  }
  labels.insert(labels.end(), bg_total - prev, 0);
  return labels;
}

FeatureMap render(const TaskSpec& spec, const Tensor& protos, const std::vector<std::size_t>& labels,
                  std::mt19937_64& rng) {
  FeatureMap m;
  m.height = spec.height;
  m.width = spec.width;
  m.features = Tensor(Shape::matrix(labels.size(), spec.feature_dim));
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t p = 0; p < labels.size(); ++p) {
    auto proto = protos.row(labels[p]);
    auto out = m.features.row(p);
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = static_cast<double>(static_cast<float>(proto[i] + spec.noise_std * noise(rng)));
    }
  }
  return m;
}

std::vector<std::pair<std::size_t, std::size_t>> full_regions(const TaskSpec& spec) {
  const auto budgets = spec.class_budgets();
  std::vector<std::pair<std::size_t, std::size_t>> regions;
  for (std::size_t k = 0; k < budgets.size(); ++k) regions.emplace_back(k + 1, budgets[k]);
  return regions;
}

}  // namespace

GeneratedTask generate_task(const TaskSpec& spec) {
  spec.validate();
  const ClassPartition part = spec.partition();
  const std::size_t pixels = spec.height * spec.width;

  GeneratedTask task;
  auto proto_rng = stream(spec.seed, 1);
  task.prototypes = make_prototypes(spec, proto_rng);
  task.episode.partition = part;

  const auto regions = full_regions(spec);
  auto base_rng = stream(spec.seed, 2);
  for (std::size_t i = 0; i < spec.n_base_images; ++i) {
    BaseSample s;
    s.true_labels = layout(pixels, regions, base_rng);
    s.map = render(spec, task.prototypes, s.true_labels, base_rng);
    s.labels = s.true_labels;
    for (auto& l : s.labels)
      if (part.is_novel(l)) l = 0;
    task.base.images.push_back(std::move(s));
  }
  task.episode.train_histogram = base_histogram(task.base, part);

  const auto budgets = spec.class_budgets();
  auto support_rng = stream(spec.seed, 3);
  for (std::size_t i = 0; i < spec.n_support_images; ++i) {
    const std::size_t j = i % part.n_novel;
    const std::size_t cls = part.novel_class(j);
    const std::size_t count = spec.support_novel_pixels ? spec.support_novel_pixels : budgets[part.n_base + j];
    SupportSample s;
    s.novel_class = cls;
    const auto labels = layout(pixels, {{cls, count}}, support_rng);
    s.map = render(spec, task.prototypes, labels, support_rng);
    s.mask.resize(pixels);
    for (std::size_t p = 0; p < pixels; ++p) s.mask[p] = labels[p] == cls ? 1 : 0;
    task.episode.support.push_back(std::move(s));
  }

  auto query_rng = stream(spec.seed, 4);
  for (std::size_t i = 0; i < spec.n_query_images; ++i) {
    QuerySample q;
    q.labels = layout(pixels, regions, query_rng);
    q.map = render(spec, task.prototypes, q.labels, query_rng);
    task.episode.query.push_back(std::move(q));
  }
  return task;
}

std::vector<double> base_histogram(const BaseDataset& data, const ClassPartition& partition) {
  std::vector<double> hist(partition.base_side(), 0.0);
  for (const auto& img : data.images)
    for (std::size_t l : img.labels) {
      if (l >= hist.size()) throw DataError("base-phase label outside background/base range");
      hist[l] += 1.0;
    }
  return hist;
}

Tensor stack_features(const std::vector<const FeatureMap*>& maps) {
  std::size_t rows = 0, cols = 0;
  for (const FeatureMap* m : maps) {
    if (rows && m->feature_dim() != cols) throw ShapeError("stack_features: feature dims differ");
    cols = m->feature_dim();
    rows += m->features.rows();
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const FeatureMap* m : maps) data.insert(data.end(), m->features.data().begin(), m->features.data().end());
  return Tensor::matrix(rows, cols, std::move(data));
}

Tensor train_base_classifier(const BaseDataset& data, const ClassPartition& partition, const BaseTrainConfig& cfg) {
  partition.validate();
  if (data.images.empty()) throw ContractError("base-phase dataset is empty");
  std::vector<const FeatureMap*> maps;
  std::vector<std::size_t> labels;
  for (const auto& img : data.images) {
    maps.push_back(&img.map);
    labels.insert(labels.end(), img.labels.begin(), img.labels.end());
  }
  const auto hist = base_histogram(data, partition);
  for (std::size_t k = 0; k < hist.size(); ++k) {
    if (hist[k] == 0.0) throw ContractError("base-phase dataset lacks class " + std::to_string(k));
  }
  const Tensor features = stack_features(maps);
  const std::vector<std::uint8_t> all(labels.size(), 1);
  MarginVector no_margin;
  no_margin.deltas.assign(partition.base_side(), 0.0);

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> init(0.0, cfg.init_std);
  Tensor w(Shape::matrix(partition.base_side(), features.cols()));
  for (double& v : w.data()) v = init(rng);

  std::vector<Tensor> velocity;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    ad::Tape tape;
    ad::Var wv = tape.parameter(w);
    ad::Var loss = ldam_loss(ad::matmul_nt(tape.constant(features), wv), labels, no_margin, all);
    const double value = loss.value().item();
    if (!std::isfinite(value) || value > 1e6) {
      throw NumericalAbort("base classifier training diverged at epoch " + std::to_string(epoch));
    }
    tape.backward(loss);
    Tensor* params[] = {&w};
    const Tensor grads[] = {*tape.grad(wv)};
    sgd_step(params, grads, velocity, cfg.lr, cfg.momentum);
  }
  return w;
}

}  // namespace gfss
