// SPDX-License-Identifier: Apache-2.0
#include "gfss/run_config.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <set>

#include <json.hpp>

#include "gfss/errors.hpp"
#include "gfss/featuremap_io.hpp"

namespace gfss {
namespace {

using nlohmann::json;
using ojson = nlohmann::ordered_json;

/// Walks one JSON object, tracking which keys were consumed.
class Section {
 public:
  Section(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
        if (!it->is_number_unsigned()) throw ConfigError(child(key) + " must be a non-negative integer");
      }
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError(child(key) + " has the wrong type");
    }
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown config key '" + child(it.key()) + "'");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : "'" + path_ + "'"; }

  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

const char* merge_mode_name(MergeMode m) { return m == MergeMode::kRawSum ? "raw-sum" : "log-prob-sum"; }

MergeMode parse_merge_mode(const std::string& s, const std::string& path) {
  if (s == "log-prob-sum") return MergeMode::kLogProbSum;
  if (s == "raw-sum") return MergeMode::kRawSum;
  throw ConfigError(path + ": unknown merge mode '" + s + "'");
}

void read_task(const json& j, TaskSpec& t) {
  Section s(j, "task");
  s.get("feature_dim", t.feature_dim);
  s.get("n_base", t.n_base);
  s.get("n_novel", t.n_novel);
  if (const json* a = s.sub("anchors")) {
    if (!a->is_array()) throw ConfigError("task.anchors must be an array");
    t.anchors.clear();
    for (std::size_t i = 0; i < a->size(); ++i) {
      Section e((*a)[i], "task.anchors[" + std::to_string(i) + "]");
      NovelAnchor anchor;
      e.get("base_class", anchor.base_class);
      e.get("similarity", anchor.similarity);
      e.finish();
      t.anchors.push_back(anchor);
    }
  }
  s.get("noise_std", t.noise_std);
  s.get("height", t.height);
  s.get("width", t.width);
  if (const json* p = s.sub("profile")) {
    Section ps(*p, "task.profile");
    ps.get("head_budget", t.profile.head_budget);
    ps.get("decay", t.profile.decay);
    ps.finish();
  }
  s.get("support_novel_pixels", t.support_novel_pixels);
  s.get("n_support_images", t.n_support_images);
  s.get("n_query_images", t.n_query_images);
  s.get("n_base_images", t.n_base_images);
  s.finish();
}

void read_base_training(const json& j, BaseTrainConfig& b) {
  Section s(j, "base_training");
  s.get("epochs", b.epochs);
  s.get("lr", b.lr);
  s.get("momentum", b.momentum);
  s.get("init_std", b.init_std);
  s.finish();
}

void read_adaptation(const json& j, AdaptationConfig& a) {
  Section s(j, "adaptation");
  s.get("epochs", a.epochs);
  s.get("lr", a.lr);
  s.get("momentum", a.momentum);
  s.get("lambda", a.lambda);
  s.get("C", a.ldam_C);
  s.get("t_pi", a.t_pi);
  s.get("trace_every", a.trace_every);
  s.get("kd_weight", a.kd_weight);
  s.get("freeze_beta", a.freeze_beta);
  if (const json* m = s.sub("merge")) {
    Section ms(*m, "adaptation.merge");
    std::string mode = merge_mode_name(a.merge.mode);
    ms.get("mode", mode);
    a.merge.mode = parse_merge_mode(mode, "adaptation.merge.mode");
    ms.get("gamma", a.merge.gamma);
    ms.get("epsilon", a.merge.epsilon);
    ms.finish();
  }
  if (const json* i = s.sub("init")) {
    Section is(*i, "adaptation.init");
    is.get("hidden", a.init.hidden);
    is.get("kappa", a.init.kappa);
    is.get("novel_std", a.init.novel_std);
    is.get("mlp_out_std", a.init.mlp_out_std);
    is.finish();
  }
  s.finish();
}

std::vector<std::string> string_list(const json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path + " must be an array of strings");
  std::vector<std::string> out;
  for (const auto& v : j) {
    if (!v.is_string()) throw ConfigError(path + " must be an array of strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

}  // namespace

const std::vector<std::string>& known_ablation_arms() {
  static const std::vector<std::string> arms{"full",     "w/o-transition",        "w/o-LDAM",
                                             "w/o-Lpi", "distillation-baseline", "no-preservation"};
  return arms;
}

std::filesystem::path RunConfig::resolved_episode_dir() const {
  return episode_dir.empty() ? output_dir / "episode" : episode_dir;
}

void RunConfig::apply_seed(std::uint64_t s) {
  seed = s;
  task.seed = s;
  base_training.seed = s;
  adaptation.seed = s;
}

void RunConfig::validate() const {
  task.validate();
  adaptation.validate();
  if (base_training.epochs < 1) throw ConfigError("base_training.epochs must be >= 1");
  if (!(base_training.lr > 0.0)) throw ConfigError("base_training.lr must be > 0");
  if (!(base_training.momentum >= 0.0 && base_training.momentum < 1.0)) {
    throw ConfigError("base_training.momentum must lie in [0, 1)");
  }
  if (!(base_training.init_std >= 0.0)) throw ConfigError("base_training.init_std must be >= 0");
  if (arms.empty()) throw ConfigError("arms must not be empty");
  for (double l : sweep_lambda)
    if (!(l >= 0.0)) throw ConfigError("sweep.lambda entries must be >= 0");
  if (ablation_seeds < 1) throw ConfigError("ablation.seeds must be >= 1");
  if (ablation_arms.empty()) throw ConfigError("ablation.arms must not be empty");
  const auto& known = known_ablation_arms();
  for (const auto& a : ablation_arms) {
    if (std::find(known.begin(), known.end(), a) == known.end()) throw ConfigError("unknown ablation arm '" + a + "'");
  }
}

RunConfig parse_run_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig cfg;
  Section s(root, "");
  std::uint64_t seed = 0;
  s.get("seed", seed);
  std::string out = cfg.output_dir.string(), episode;
  s.get("output_dir", out);
  s.get("episode_dir", episode);
  cfg.output_dir = out;
  cfg.episode_dir = episode;
  if (const json* a = s.sub("arms")) {
    cfg.arms.clear();
    for (const auto& name : string_list(*a, "arms")) cfg.arms.push_back(parse_arm(name));
  }
  s.get("parallel", cfg.parallel);
  if (const json* t = s.sub("task")) read_task(*t, cfg.task);
  if (const json* b = s.sub("base_training")) read_base_training(*b, cfg.base_training);
  if (const json* a = s.sub("adaptation")) read_adaptation(*a, cfg.adaptation);
  if (const json* sw = s.sub("sweep")) {
    Section ss(*sw, "sweep");
    ss.get("lambda", cfg.sweep_lambda);
    ss.finish();
  }
  if (const json* ab = s.sub("ablation")) {
    Section as(*ab, "ablation");
    if (const json* arms = as.sub("arms")) cfg.ablation_arms = string_list(*arms, "ablation.arms");
    as.get("seeds", cfg.ablation_seeds);
    as.finish();
  }
  s.finish();
  cfg.apply_seed(seed);
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) { return parse_run_config(read_file(path)); }

std::string dump_run_config(const RunConfig& cfg) {
  ojson j;
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir.string();
  j["episode_dir"] = cfg.episode_dir.string();
  auto arms = ojson::array();
  for (Arm a : cfg.arms) arms.push_back(arm_name(a));
  j["arms"] = arms;
  j["parallel"] = cfg.parallel;

  const TaskSpec& t = cfg.task;
  ojson task;
  task["feature_dim"] = t.feature_dim;
  task["n_base"] = t.n_base;
  task["n_novel"] = t.n_novel;
  auto anchors = ojson::array();
  for (const auto& a : t.resolved_anchors()) anchors.push_back({{"base_class", a.base_class}, {"similarity", a.similarity}});
  task["anchors"] = anchors;
  task["noise_std"] = t.noise_std;
  task["height"] = t.height;
  task["width"] = t.width;
  task["profile"] = {{"head_budget", t.profile.head_budget}, {"decay", t.profile.decay}};
  task["support_novel_pixels"] = t.support_novel_pixels;
  task["n_support_images"] = t.n_support_images;
  task["n_query_images"] = t.n_query_images;
  task["n_base_images"] = t.n_base_images;
  j["task"] = task;

  const BaseTrainConfig& b = cfg.base_training;
  j["base_training"] = {{"epochs", b.epochs}, {"lr", b.lr}, {"momentum", b.momentum}, {"init_std", b.init_std}};

  const AdaptationConfig& a = cfg.adaptation;
  ojson ad;
  ad["epochs"] = a.epochs;
  ad["lr"] = a.lr;
  ad["momentum"] = a.momentum;
  ad["lambda"] = a.lambda;
  ad["C"] = a.ldam_C;
  ad["t_pi"] = a.t_pi;
  ad["trace_every"] = a.trace_every;
  ad["kd_weight"] = a.kd_weight;
  ad["freeze_beta"] = a.freeze_beta;
  ad["merge"] = {{"mode", merge_mode_name(a.merge.mode)}, {"gamma", a.merge.gamma}, {"epsilon", a.merge.epsilon}};
  ad["init"] = {{"hidden", a.init.hidden},
                {"kappa", a.init.kappa},
                {"novel_std", a.init.novel_std},
                {"mlp_out_std", a.init.mlp_out_std}};
  j["adaptation"] = ad;

  j["sweep"] = {{"lambda", cfg.sweep_lambda}};
  j["ablation"] = {{"arms", cfg.ablation_arms}, {"seeds", cfg.ablation_seeds}};
  return j.dump(2) + "\n";
}

std::string config_hash(const RunConfig& cfg) {
  // Where results go and how runs are scheduled do not change them.
  RunConfig c = cfg;
  c.output_dir.clear();
  c.episode_dir.clear();
  c.parallel = false;
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : dump_run_config(c)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

}  // namespace gfss
