// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include <CLI11.hpp>

#include "gfss/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generalized few-shot segmentation head on synthetic feature maps"};
  app.require_subcommand(1);

  std::string config_path, out;
  std::uint64_t seed = 0;
  std::vector<std::string> arms;
  bool parallel = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    cmd->add_option("--out", out, "output directory");
    cmd->add_option("--seed", seed, "seed, overrides the config");
    cmd->add_flag("--parallel", parallel, "run independent arms concurrently");
  };

  CLI::App* generate = app.add_subcommand("generate", "write a synthetic episode");
  add_common(generate);
  CLI::App* adapt = app.add_subcommand("adapt", "adapt the head on a stored episode");
  add_common(adapt);
  adapt->add_option("--arms", arms, "transition, classifier-only, distillation")->delimiter(',');
  CLI::App* ablate = app.add_subcommand("ablate", "ablation table over arm variants");
  add_common(ablate);
  ablate->add_option("--arms", arms, "full, w/o-transition, w/o-LDAM, w/o-Lpi, distillation-baseline, no-preservation")
      ->delimiter(',');
  CLI::App* check = app.add_subcommand("check-gradients", "autodiff vs finite differences");
  check->add_option("--seed", seed, "instance seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : gfss::kExitConfig;
  }

  try {
    if (check->parsed()) return gfss::cmd_check_gradients(seed, std::cout);

    gfss::CliOverrides o;
    for (CLI::App* cmd : {generate, adapt, ablate}) {
      if (!cmd->parsed()) continue;
      if (cmd->count("--out")) o.out = out;
      if (cmd->count("--seed")) o.seed = seed;
      if (cmd != generate && cmd->count("--arms")) o.arms = arms;
    }
    o.parallel = parallel;
    const gfss::RunConfig cfg = gfss::resolve_config(config_path, o, ablate->parsed());
    if (generate->parsed()) gfss::cmd_generate(cfg, std::cout);
    if (adapt->parsed()) gfss::cmd_adapt(cfg, std::cout);
    if (ablate->parsed()) gfss::cmd_ablate(cfg, std::cout);
    return gfss::kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return gfss::exit_code_for(e);
  }
}
