// SPDX-License-Identifier: Apache-2.0
#include "gfss/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <future>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "gfss/errors.hpp"
#include "gfss/featuremap_io.hpp"
#include "gfss/gradient_suite.hpp"

namespace gfss {
namespace {

using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string lambda_tag(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

ojson iou_json(const MetricsReport& r) {
  auto a = ojson::array();
  for (const auto& v : r.per_class_iou) a.push_back(v ? ojson(*v) : ojson(nullptr));
  return a;
}

ojson report_json(const MetricsReport& r) {
  return {{"base_miou", r.base_miou},
          {"novel_miou", r.novel_miou},
          {"average_miou", r.average_miou},
          {"weighted_miou", r.weighted_miou},
          {"per_class_iou", iou_json(r)},
          {"pixel_counts", r.pixel_counts}};
}

std::string trace_csv(const AdaptationTrace& trace, const std::string& preamble) {
  std::ostringstream os;
  os << preamble << "epoch,total,ldam,l_pi,kd,support_miou,query_miou,query_base_miou,query_novel_miou\n";
  for (const TraceEntry& e : trace.entries) {
    os << e.epoch << ',' << fmt17(e.total) << ',' << fmt17(e.ldam) << ',' << fmt17(e.l_pi) << ',' << fmt17(e.kd) << ','
       << fmt17(e.support_miou) << ',' << fmt17(e.query_miou) << ',' << fmt17(e.query_base_miou) << ','
       << fmt17(e.query_novel_miou) << '\n';
  }
  return os.str();
}

struct RunSpec {
  std::string name;
  AdaptationConfig cfg;
};

struct RunOutcome {
  std::string name;
  AdaptationConfig cfg;
  AdaptationResult result;
};

/// Runs every spec, optionally one thread per run; results keep spec order.
std::vector<RunOutcome> run_all(const std::vector<RunSpec>& specs, const Episode& ep, const Tensor& w, bool parallel) {
  std::vector<RunOutcome> out;
  if (!parallel) {
    for (const auto& s : specs) out.push_back({s.name, s.cfg, run_adaptation(ep, w, s.cfg)});
    return out;
  }
  std::vector<std::future<AdaptationResult>> jobs;
  for (const auto& s : specs) {
    jobs.push_back(std::async(std::launch::async, [&ep, &w, cfg = s.cfg] { return run_adaptation(ep, w, cfg); }));
  }
  for (std::size_t i = 0; i < specs.size(); ++i) out.push_back({specs[i].name, specs[i].cfg, jobs[i].get()});
  return out;
}

void round_to_float(Tensor& t) {
  for (double& v : t.data()) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace

RunConfig resolve_config(const fs::path& config_path, const CliOverrides& o, bool ablation) {
  RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
  if (o.out) cfg.output_dir = *o.out;
  if (o.seed) cfg.apply_seed(*o.seed);
  if (o.arms) {
    if (ablation) {
      cfg.ablation_arms = *o.arms;
    } else {
      cfg.arms.clear();
      for (const auto& a : *o.arms) cfg.arms.push_back(parse_arm(a));
    }
  }
  if (o.parallel) cfg.parallel = true;
  cfg.validate();
  return cfg;
}

PreparedEpisode prepare_episode(const RunConfig& cfg) {
  PreparedEpisode p;
  p.task = generate_task(cfg.task);
  p.w_base_frozen = train_base_classifier(p.task.base, cfg.task.partition(), cfg.base_training);
  // Stored at 32 bits; rounding here keeps in-memory and reloaded runs identical.
  round_to_float(p.w_base_frozen);
  return p;
}

AdaptationConfig ablation_config(const std::string& arm, const AdaptationConfig& base) {
  AdaptationConfig c = base;
  c.arm = Arm::kTransition;
  if (arm == "full") {
  } else if (arm == "w/o-transition") {
    c.arm = Arm::kClassifierOnly;
  } else if (arm == "w/o-LDAM") {
    c.ldam_C = 0.0;
  } else if (arm == "w/o-Lpi") {
    c.lambda = 0.0;
  } else if (arm == "distillation-baseline") {
    c.arm = Arm::kDistillation;
  } else if (arm == "no-preservation") {
    c.init.kappa = 0.0;
    c.freeze_beta = true;
  } else {
    throw ConfigError("unknown ablation arm '" + arm + "'");
  }
  return c;
}

void cmd_generate(const RunConfig& cfg, std::ostream& log) {
  const fs::path dir = cfg.resolved_episode_dir();
  ensure_dir(cfg.output_dir);
  PreparedEpisode p = prepare_episode(cfg);
  const std::string hash = config_hash(cfg);
  save_episode(dir, p.task, p.w_base_frozen, hash, cfg.seed);
  write_file(cfg.output_dir / "config.json", dump_run_config(cfg));
  log << "episode written to " << dir.string() << " (config " << hash << ", seed " << cfg.seed << ")\n";
}

void cmd_adapt(const RunConfig& cfg, std::ostream& log) {
  const StoredEpisode stored = load_episode(cfg.resolved_episode_dir());
  const Episode& ep = stored.episode;
  if (!(ep.partition.n_base == cfg.task.n_base && ep.partition.n_novel == cfg.task.n_novel)) {
    throw DataError("episode class partition does not match the config");
  }
  const std::string hash = config_hash(cfg);
  ensure_dir(cfg.output_dir);
  write_file(cfg.output_dir / "config.json", dump_run_config(cfg));

  std::vector<RunSpec> specs;
  for (Arm arm : cfg.arms) {
    AdaptationConfig a = cfg.adaptation;
    a.arm = arm;
    if (cfg.sweep_lambda.empty()) {
      specs.push_back({arm_name(arm), a});
    } else {
      for (double l : cfg.sweep_lambda) {
        a.lambda = l;
        specs.push_back({std::string(arm_name(arm)) + "_lambda-" + lambda_tag(l), a});
      }
    }
  }

  const MetricsReport frozen = frozen_classifier_report(ep, stored.w_base_frozen);
  const std::string preamble = "# config_hash=" + hash + " seed=" + std::to_string(cfg.seed) + "\n";
  for (const RunOutcome& r : run_all(specs, ep, stored.w_base_frozen, cfg.parallel)) {
    const fs::path dir = cfg.output_dir / r.name;
    ensure_dir(dir);
    ojson m;
    m["config_hash"] = hash;
    m["episode_config_hash"] = stored.config_hash;
    m["seed"] = cfg.seed;
    m["arm"] = arm_name(r.cfg.arm);
    m["lambda"] = r.cfg.lambda;
    m["query_files"] = stored.query_files;
    m["query"] = report_json(r.result.query_report);
    m["frozen_classifier"] = report_json(frozen);
    m["support_miou"] = r.result.support_miou;
    m["prior_counts"] = r.result.prior.counts;
    m["margins"] = r.result.margins.deltas;
    m["initial_pi"] = r.result.initial_pi.values;
    m["snapshot_pi"] = r.result.snapshot_pi ? ojson(r.result.snapshot_pi->values) : ojson(nullptr);
    write_file(dir / "metrics.json", m.dump(2) + "\n");
    write_file(dir / "trace.csv", trace_csv(r.result.trace, preamble));
    if (r.cfg.arm == Arm::kTransition) {
      const Tensor query = [&] {
        std::vector<const FeatureMap*> maps;
        for (const auto& q : ep.query) maps.push_back(&q.map);
        return stack_features(maps);
      }();
      const TransitionMatrix mean = mean_transition_matrix(query, r.result.params);
      write_file(dir / "heatmap.csv", heatmap_to_csv(export_heatmap(mean), preamble));
    }
    const MetricsReport& q = r.result.query_report;
    log << r.name << ": base " << q.base_miou << " novel " << q.novel_miou << " weighted " << q.weighted_miou << '\n';
  }
}

void cmd_ablate(const RunConfig& cfg, std::ostream& log) {
  const std::string hash = config_hash(cfg);
  ensure_dir(cfg.output_dir);
  write_file(cfg.output_dir / "config.json", dump_run_config(cfg));

  std::vector<RunSpec> specs;
  for (const auto& arm : cfg.ablation_arms) specs.push_back({arm, ablation_config(arm, cfg.adaptation)});

  // rows[arm][seed]
  std::vector<std::vector<MetricsReport>> rows(specs.size());
  for (std::size_t s = 0; s < cfg.ablation_seeds; ++s) {
    const std::uint64_t seed = cfg.seed + s;
    Episode ep;
    Tensor w;
    if (cfg.ablation_seeds == 1) {
      StoredEpisode stored = load_episode(cfg.resolved_episode_dir());
      ep = std::move(stored.episode);
      w = std::move(stored.w_base_frozen);
    } else {
      RunConfig c = cfg;
      c.apply_seed(seed);
      PreparedEpisode p = prepare_episode(c);
      ep = std::move(p.task.episode);
      w = std::move(p.w_base_frozen);
    }
    std::vector<RunSpec> seeded = specs;
    for (auto& r : seeded) r.cfg.seed = seed;
    auto outcomes = run_all(seeded, ep, w, cfg.parallel);
    for (std::size_t i = 0; i < outcomes.size(); ++i) rows[i].push_back(outcomes[i].result.query_report);
    log << "seed " << seed << " done\n";
  }

  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };

  std::ostringstream csv;
  csv << "# config_hash=" << hash << " seed=" << cfg.seed << " seeds=" << cfg.ablation_seeds << '\n';
  csv << "arm,base_miou,novel_miou,average_miou,weighted_miou\n";
  ojson j;
  j["config_hash"] = hash;
  j["seed"] = cfg.seed;
  j["seeds"] = cfg.ablation_seeds;
  auto arms = ojson::array();
  for (std::size_t i = 0; i < specs.size(); ++i) {
    std::vector<double> b, n, a, w;
    auto per_seed = ojson::array();
    for (const auto& r : rows[i]) {
      b.push_back(r.base_miou);
      n.push_back(r.novel_miou);
      a.push_back(r.average_miou);
      w.push_back(r.weighted_miou);
      per_seed.push_back(report_json(r));
    }
    const double mb = median(b), mn = median(n), ma = median(a), mw = median(w);
    csv << specs[i].name << ',' << fmt17(mb) << ',' << fmt17(mn) << ',' << fmt17(ma) << ',' << fmt17(mw) << '\n';
    arms.push_back({{"arm", specs[i].name},
                    {"median", {{"base_miou", mb}, {"novel_miou", mn}, {"average_miou", ma}, {"weighted_miou", mw}}},
                    {"per_seed", per_seed}});
    log << specs[i].name << ": base " << mb << " novel " << mn << " average " << ma << " weighted " << mw << '\n';
  }
  j["arms"] = arms;
  write_file(cfg.output_dir / "ablation.csv", csv.str());
  write_file(cfg.output_dir / "ablation.json", j.dump(2) + "\n");
}

int cmd_check_gradients(std::uint64_t seed, std::ostream& log) {
  const GradientSuiteReport r = run_gradient_suite(100, seed);
  for (const auto& c : r.cases) {
    char line[160];
    std::snprintf(line, sizeof line, "%-20s %4zu instances  max rel err %.3e  %s\n", c.name.c_str(), c.instances,
                  c.max_rel_error, c.passed ? "ok" : "FAIL");
    log << line;
  }
  log << (r.passed() ? "all gradients agree" : "gradient mismatch") << " (" << r.seconds << " s)\n";
  return r.passed() ? kExitOk : kExitGradientCheck;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const IoError*>(&e)) return kExitIo;
  if (dynamic_cast<const NumericalAbort*>(&e)) return kExitNumerical;
  if (dynamic_cast<const DataError*>(&e)) return kExitData;
  return kExitFailure;
}

}  // namespace gfss
