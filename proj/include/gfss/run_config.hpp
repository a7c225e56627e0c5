// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gfss/adaptation.hpp"
#include "gfss/synthgen.hpp"

// JSON run configuration. Every key is optional; unknown keys are rejected
// with their full path so that typos do not silently fall back to defaults.
//
//   {
//     "seed": 0,
//     "output_dir": "runs",
//     "episode_dir": "",             // empty: <output_dir>/episode
//     "arms": ["transition"],
//     "parallel": false,
//     "task": { "feature_dim": 32, "n_base": 4, "n_novel": 2,
//               "anchors": [{"base_class": 1, "similarity": 0.9}, ...],
//               "noise_std": 0.1, "height": 24, "width": 24,
//               "profile": {"head_budget": 96, "decay": 0.7},
//               "support_novel_pixels": 0, "n_support_images": 4,
//               "n_query_images": 4, "n_base_images": 8 },
//     "base_training": { "epochs": 300, "lr": 0.5, "momentum": 0.9, "init_std": 0.01 },
//     "adaptation": { "epochs": 800, "lr": 0.01, "momentum": 0.9, "lambda": 1.0,
//                     "C": 0.5, "t_pi": 20, "trace_every": 1, "kd_weight": 1.0,
//                     "freeze_beta": false,
//                     "merge": {"mode": "log-prob-sum", "gamma": 1.0, "epsilon": 1e-8},
//                     "init": {"hidden": 0, "kappa": 4.0, "novel_std": 0.01, "mlp_out_std": 0.01} },
//     "sweep": { "lambda": [] },
//     "ablation": { "arms": ["full", "w/o-transition", "w/o-LDAM"], "seeds": 1 }
//   }
//
// The single top-level seed drives episode generation, base training and
// adaptation.

namespace gfss {

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "runs";
  std::filesystem::path episode_dir;
  std::vector<Arm> arms{Arm::kTransition};
  bool parallel = false;

  TaskSpec task;
  BaseTrainConfig base_training;
  AdaptationConfig adaptation;

  std::vector<double> sweep_lambda;

  std::vector<std::string> ablation_arms{"full", "w/o-transition", "w/o-LDAM"};
  std::size_t ablation_seeds = 1;

  /// Episode directory with the default applied.
  std::filesystem::path resolved_episode_dir() const;
  /// Pushes the top-level seed into the nested sections.
  void apply_seed(std::uint64_t s);
  /// Throws ConfigError on any invalid nested setting.
  void validate() const;
};

/// Throws ConfigError (with the key path) on unknown keys, wrong types or invalid values.
RunConfig parse_run_config(const std::string& json_text);
/// Reads and parses a config file; IoError if it cannot be read.
RunConfig load_run_config(const std::filesystem::path& path);

/// Canonical JSON of every field, defaults included.
std::string dump_run_config(const RunConfig& cfg);
/// 16 hex digits of FNV-1a 64 over dump_run_config, ignoring output_dir,
/// episode_dir and parallel.
std::string config_hash(const RunConfig& cfg);

/// Names accepted in "ablation.arms".
const std::vector<std::string>& known_ablation_arms();

}  // namespace gfss
