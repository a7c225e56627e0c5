// SPDX-License-Identifier: Apache-2.0
#include "gfss/adaptation.hpp"

#include <cmath>
#include <random>
#include <utility>

#include "gfss/errors.hpp"
#include "gfss/optim.hpp"

namespace gfss {

const char* arm_name(Arm arm) {
  switch (arm) {
    case Arm::kTransition: return "transition";
    case Arm::kDistillation: return "distillation-baseline";
    case Arm::kClassifierOnly: return "classifier-only";
  }
  return "?";
}

Arm parse_arm(const std::string& name) {
  if (name == "transition") return Arm::kTransition;
  if (name == "distillation-baseline" || name == "distillation") return Arm::kDistillation;
  if (name == "classifier-only") return Arm::kClassifierOnly;
  throw ConfigError("unknown arm '" + name + "'");
}

void AdaptationConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  if (!(ldam_C >= 0.0)) throw ConfigError("C must be >= 0");
  if (t_pi >= epochs) throw ConfigError("t_pi must be smaller than epochs");
  if (trace_every < 1) throw ConfigError("trace_every must be >= 1");
  if (!(kd_weight >= 0.0)) throw ConfigError("kd_weight must be >= 0");
  try {
    merge.validate();
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
}

namespace {

struct SupportData {
  Tensor features;
  std::vector<std::size_t> labels;
  std::vector<std::uint8_t> mask;
};

SupportData collect_support(const Episode& ep) {
  SupportData s;
  std::vector<const FeatureMap*> maps;
  for (const auto& img : ep.support) {
    if (img.mask.size() != img.map.pixels()) throw DataError("support mask size differs from its feature map");
    maps.push_back(&img.map);
    for (std::uint8_t m : img.mask) s.labels.push_back(m ? img.novel_class : 0);
  }
  s.features = stack_features(maps);
  s.mask.assign(s.labels.size(), 1);
  return s;
}

struct QueryData {
  Tensor features;
  std::vector<std::size_t> labels;
};

QueryData collect_query(const Episode& ep) {
  QueryData q;
  std::vector<const FeatureMap*> maps;
  for (const auto& img : ep.query) {
    maps.push_back(&img.map);
    q.labels.insert(q.labels.end(), img.labels.begin(), img.labels.end());
  }
  q.features = stack_features(maps);
  return q;
}

ConfusionMatrix confusion_of(const Tensor& probs, const std::vector<std::size_t>& labels, std::size_t K) {
  const auto pred = argmax_rows(probs);
  return confusion_accumulate(pred, labels, K);
}

using Binding = std::vector<std::pair<ad::Var, Tensor*>>;

Binding trainable_bindings(HeadVars& v, HeadParams& p) {
  Binding b;
  auto add = [&](ad::Var var, Tensor& t) {
    if (var.requires_grad()) b.emplace_back(var, &t);
  };
  add(v.w_base, p.w_base);
  add(v.w_novel, p.w_novel);
  for (auto [mv, mp] : {std::pair{&v.row_mlp, &p.row_mlp}, std::pair{&v.col_mlp, &p.col_mlp}}) {
    add(mv->w1, mp->w1);
    add(mv->b1, mp->b1);
    add(mv->w2, mp->w2);
    add(mv->b2, mp->b2);
  }
  add(v.beta, p.beta);
  return b;
}

}  // namespace

MetricsReport evaluate_query(const Episode& episode, const HeadParams& params, const MergeConfig& merge,
                             bool use_transition, ConfusionMatrix* cm_out) {
  const QueryData q = collect_query(episode);
  const ConfusionMatrix cm =
      confusion_of(predict(q.features, params, merge, use_transition), q.labels, episode.partition.num_classes());
  if (cm_out) *cm_out = cm;
  return report_from_confusion(cm, episode.partition);
}

MetricsReport frozen_classifier_report(const Episode& episode, const Tensor& w_base_frozen, const AggregateConfig& agg) {
  const QueryData q = collect_query(episode);
  const auto pred = argmax_rows(ad::matmul_nt(q.features, w_base_frozen));
  const ConfusionMatrix cm = confusion_accumulate(pred, q.labels, episode.partition.num_classes());
  return report_from_confusion(cm, episode.partition, agg);
}

AdaptationResult run_adaptation(const Episode& episode, const Tensor& w_base_frozen, const AdaptationConfig& cfg) {
  cfg.validate();
  const ClassPartition& part = episode.partition;
  part.validate();
  if (episode.support.empty()) throw ContractError("episode has an empty support set");
  if (episode.query.empty()) throw ContractError("episode has no query images");

  const SupportData support = collect_support(episode);
  const QueryData query = collect_query(episode);
  const std::size_t K = part.num_classes();

  AdaptationResult result;
  std::vector<SupportMaskRef> masks;
  for (const auto& s : episode.support) masks.push_back({s.mask, s.novel_class});
  result.prior = estimate_class_prior(episode.train_histogram, masks, part);
  result.margins = ldam_margins(result.prior, cfg.ldam_C);

  std::mt19937_64 rng(cfg.seed);
  result.params = init_head(w_base_frozen, part, cfg.init, rng);
  HeadParams& params = result.params;

  const bool use_transition = cfg.arm == Arm::kTransition;
  TrainableSet trainable = use_transition ? TrainableSet{} : TrainableSet::classifier_only();
  if (cfg.freeze_beta) trainable.beta = false;

  Tensor frozen_query_probs;
  if (cfg.arm == Arm::kDistillation) frozen_query_probs = ad::softmax_rows(ad::matmul_nt(query.features, w_base_frozen));

  std::vector<Tensor> velocity;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    ad::Tape tape;
    HeadVars head = bind_head(tape, params, trainable);
    const HeadOutputs s_out = forward_head(head, tape.constant(support.features), cfg.merge, use_transition);
    const HeadOutputs q_out = forward_head(head, tape.constant(query.features), cfg.merge, use_transition);

    ad::Var ldam = ldam_loss(s_out.logits, support.labels, result.margins, support.mask);
    ad::Var proportions = query_proportions(q_out.probs);
    if (epoch == 0) result.initial_pi = ProportionVector::from(proportions.value());
    if (epoch == cfg.t_pi) result.snapshot_pi = ProportionVector::from(proportions.value());
    const ProportionVector pi = pi_schedule(epoch, cfg.t_pi, result.initial_pi, result.snapshot_pi);
    ad::Var l_pi = pi_regularizer(proportions, pi);
    ad::Var total = total_loss(ldam, l_pi, cfg.lambda);
    double kd_value = 0.0;
    if (cfg.arm == Arm::kDistillation) {
      ad::Var kd = kd_loss(q_out.probs, frozen_query_probs, part);
      kd_value = kd.value().item();
      total = ad::add(total, ad::scale(kd, cfg.kd_weight));
    }

    const double total_value = total.value().item();
    if (!std::isfinite(total_value) || total_value > 1e6) {
      throw NumericalAbort("objective became " + std::to_string(total_value) + " at epoch " + std::to_string(epoch) +
                           " (arm " + arm_name(cfg.arm) + "); lower the learning rate");
    }

    if (epoch % cfg.trace_every == 0 || epoch + 1 == cfg.epochs) {
      TraceEntry e;
      e.epoch = epoch;
      e.total = total_value;
      e.ldam = ldam.value().item();
      e.l_pi = l_pi.value().item();
      e.kd = kd_value;
      e.support_miou = 100.0 * mean_iou(confusion_of(s_out.probs.value(), support.labels, K));
      const ConfusionMatrix qcm = confusion_of(q_out.probs.value(), query.labels, K);
      e.query_miou = 100.0 * mean_iou(qcm);
      const MetricsReport qr = report_from_confusion(qcm, part);
      e.query_base_miou = qr.base_miou;
      e.query_novel_miou = qr.novel_miou;
      e.pi = pi.values;
      result.trace.entries.push_back(std::move(e));
    }

    tape.backward(total);
    Binding bound = trainable_bindings(head, params);
    std::vector<Tensor*> targets;
    std::vector<Tensor> grads;
    for (auto& [var, tensor] : bound) {
      targets.push_back(tensor);
      const Tensor* g = tape.grad(var);
      grads.push_back(g ? *g : Tensor(tensor->shape()));
    }
    sgd_step(targets, grads, velocity, cfg.lr, cfg.momentum);
  }

  result.query_report = evaluate_query(episode, params, cfg.merge, use_transition, &result.query_confusion);
  result.support_miou =
      100.0 * mean_iou(confusion_of(predict(support.features, params, cfg.merge, use_transition), support.labels, K));
  return result;
}

}  // namespace gfss
