// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "gfss/run_config.hpp"

namespace gfss {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitIo = 3,
  kExitNumerical = 4,
  kExitData = 5,
  kExitGradientCheck = 6,
};

/// Command-line flags that override the config file.
struct CliOverrides {
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed;
  /// Arm names for `adapt`, ablation arm names for `ablate`.
  std::optional<std::vector<std::string>> arms;
  bool parallel = false;
};

/// Loads `config_path` (defaults when empty) and applies the overrides.
RunConfig resolve_config(const std::filesystem::path& config_path, const CliOverrides& overrides, bool ablation);

/// Synthetic episode plus its float-rounded frozen classifier.
struct PreparedEpisode {
  GeneratedTask task;
  Tensor w_base_frozen;
};

PreparedEpisode prepare_episode(const RunConfig& cfg);

/// Adaptation settings for a named ablation arm on top of `base`.
AdaptationConfig ablation_config(const std::string& arm, const AdaptationConfig& base);

void cmd_generate(const RunConfig& cfg, std::ostream& log);
void cmd_adapt(const RunConfig& cfg, std::ostream& log);
void cmd_ablate(const RunConfig& cfg, std::ostream& log);
/// Returns kExitOk or kExitGradientCheck.
int cmd_check_gradients(std::uint64_t seed, std::ostream& log);

/// Maps the library's error hierarchy onto process exit codes.
int exit_code_for(const std::exception& e);

}  // namespace gfss
