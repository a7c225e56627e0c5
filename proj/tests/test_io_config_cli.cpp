// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include "generators.hpp"
#include "gfss/commands.hpp"
#include "gfss/errors.hpp"
#include "gfss/featuremap_io.hpp"

using namespace gfss;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("gfss_test_" + std::to_string(::getpid()) + "_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(GFSS_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const char* kSmallConfig = R"({
  "seed": 4,
  "task": {"feature_dim": 8, "n_base": 2, "n_novel": 2, "height": 8, "width": 8,
           "profile": {"head_budget": 16, "decay": 0.7},
           "n_support_images": 3, "n_query_images": 2, "n_base_images": 3},
  "base_training": {"epochs": 50},
  "adaptation": {"epochs": 25, "lr": 0.5, "t_pi": 5},
  "arms": ["transition", "classifier-only"],
  "ablation": {"arms": ["full", "w/o-transition", "w/o-LDAM"]}
})";

}  // namespace

TEST_CASE("feature map files round-trip bit-exactly") {
  testgen::Gen g(41);
  for (int trial = 0; trial < 50; ++trial) {
    FeatureMap m;
    m.height = g.size(1, 6);
    m.width = g.size(1, 6);
    m.features = g.matrix(m.pixels(), g.size(1, 5));
    for (double& v : m.features.data()) v = static_cast<double>(static_cast<float>(v));
    std::vector<std::uint16_t> mask(m.pixels());
    for (auto& v : mask) v = g.size(0, 3) == 0 ? kMaskIgnore : static_cast<std::uint16_t>(g.size(0, 9));
    const bool with_mask = trial % 2 == 0;
    FeatureMapFile back = decode_feature_map(encode_feature_map(m, with_mask ? &mask : nullptr));
    CHECK(back.map.features == m.features);
    CHECK(back.map.height == m.height);
    CHECK(back.mask.has_value() == with_mask);
    if (with_mask) CHECK(*back.mask == mask);
  }
}

TEST_CASE("malformed feature map files are rejected") {
  FeatureMap m;
  m.height = 2;
  m.width = 2;
  m.features = Tensor(Shape::matrix(4, 3));
  std::string bytes = encode_feature_map(m);
  CHECK_THROWS_AS(decode_feature_map(bytes.substr(0, bytes.size() - 1)), DataError);
  CHECK_THROWS_AS(decode_feature_map(bytes + "x"), DataError);
  std::string wrong = bytes;
  wrong[0] = 'X';
  CHECK_THROWS_AS(decode_feature_map(wrong), DataError);
  CHECK_THROWS_AS(read_feature_map_file("/nonexistent/file.gfss"), IoError);
}

TEST_CASE("run config parsing") {
  RunConfig c = parse_run_config(kSmallConfig);
  CHECK(c.seed == 4);
  CHECK(c.task.seed == 4);
  CHECK(c.adaptation.seed == 4);
  CHECK(c.arms.size() == 2);
  CHECK(c.task.height == 8);

  RunConfig round = parse_run_config(dump_run_config(c));
  CHECK(dump_run_config(round) == dump_run_config(c));
  CHECK(config_hash(round) == config_hash(c));

  RunConfig moved = c;
  moved.output_dir = "elsewhere";
  CHECK(config_hash(moved) == config_hash(c));
  moved.adaptation.lambda = 4.0;
  CHECK(config_hash(moved) != config_hash(c));
}

TEST_CASE("config errors name the offending key") {
  auto message = [](const std::string& text) {
    try {
      parse_run_config(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(message(R"({"task": {"noise": 0.1}})").find("task.noise") != std::string::npos);
  CHECK(message(R"({"adaptation": {"merge": {"gama": 1}}})").find("adaptation.merge.gama") != std::string::npos);
  CHECK(message(R"({"adaptation": {"epochs": -3}})").find("adaptation.epochs") != std::string::npos);
  CHECK(message(R"({"adaptation": {"lr": "fast"}})").find("adaptation.lr") != std::string::npos);
  CHECK(message(R"({"arms": ["transitoin"]})").find("transitoin") != std::string::npos);
  CHECK(message(R"({"ablation": {"arms": ["everything"]}})").find("everything") != std::string::npos);
  CHECK(message("{not json").find("JSON") != std::string::npos);
}

TEST_CASE("ablation arms map onto adaptation settings") {
  AdaptationConfig base;
  CHECK(ablation_config("w/o-transition", base).arm == Arm::kClassifierOnly);
  CHECK(ablation_config("w/o-LDAM", base).ldam_C == 0.0);
  CHECK(ablation_config("w/o-Lpi", base).lambda == 0.0);
  AdaptationConfig np = ablation_config("no-preservation", base);
  CHECK(np.init.kappa == 0.0);
  CHECK(np.freeze_beta);
  CHECK(ablation_config("full", base).arm == Arm::kTransition);
}

TEST_CASE("episode save and load") {
  RunConfig c = parse_run_config(kSmallConfig);
  PreparedEpisode p = prepare_episode(c);
  fs::path dir = scratch("episode");
  save_episode(dir, p.task, p.w_base_frozen, config_hash(c), c.seed);
  StoredEpisode s = load_episode(dir);
  CHECK(s.w_base_frozen == p.w_base_frozen);
  CHECK(s.episode.support.size() == 3);
  CHECK(s.episode.support[1].map.features == p.task.episode.support[1].map.features);
  CHECK(s.episode.query[0].labels == p.task.episode.query[0].labels);
  CHECK(s.episode.train_histogram == p.task.episode.train_histogram);
  CHECK(s.config_hash == config_hash(c));
  fs::remove_all(dir);
}

TEST_CASE("cli: generate, adapt and ablate") {
  fs::path root = scratch("cli");
  {
    std::ofstream(root / "c.json") << kSmallConfig;
  }
  const std::string cfg = "--config " + (root / "c.json").string();
  REQUIRE(run_cli("generate " + cfg + " --out " + (root / "a").string()) == 0);
  REQUIRE(run_cli("generate " + cfg + " --out " + (root / "b").string()) == 0);

  std::size_t support_entries = 0;
  for (const auto& e : fs::directory_iterator(root / "a" / "episode")) {
    const std::string name = e.path().filename().string();
    if (name.rfind("support_", 0) == 0) ++support_entries;
    CHECK(read_file(e.path()) == read_file(root / "b" / "episode" / name));
  }
  CHECK(support_entries == 3);

  REQUIRE(run_cli("adapt " + cfg + " --out " + (root / "a").string()) == 0);
  REQUIRE(run_cli("adapt " + cfg + " --out " + (root / "b").string() + " --parallel") == 0);
  for (const char* arm : {"transition", "classifier-only"}) {
    for (const char* file : {"metrics.json", "trace.csv"}) {
      const std::string text = read_file(root / "a" / arm / file);
      CHECK(text == read_file(root / "b" / arm / file));
      CHECK(text.find(config_hash(parse_run_config(kSmallConfig))) != std::string::npos);
    }
  }
  CHECK(fs::exists(root / "a" / "transition" / "heatmap.csv"));
  CHECK(!fs::exists(root / "a" / "classifier-only" / "heatmap.csv"));

  REQUIRE(run_cli("ablate " + cfg + " --out " + (root / "a").string()) == 0);
  const std::string table = read_file(root / "a" / "ablation.csv");
  CHECK(std::count(table.begin(), table.end(), '\n') == 2 + 3);

  RunConfig sweep = parse_run_config(kSmallConfig);
  sweep.sweep_lambda = {0, 1, 4};
  sweep.arms = {Arm::kTransition};
  {
    std::ofstream(root / "sweep.json") << dump_run_config(sweep);
  }
  REQUIRE(run_cli("adapt --config " + (root / "sweep.json").string() + " --out " + (root / "a").string()) == 0);
  for (const char* tag : {"transition_lambda-0", "transition_lambda-1", "transition_lambda-4"})
    CHECK(fs::exists(root / "a" / tag / "trace.csv"));
  fs::remove_all(root);
}

TEST_CASE("cli: error exit codes") {
  fs::path root = scratch("cli_err");
  {
    std::ofstream(root / "bad.json") << R"({"task": {"nosie": 1}})";
  }
  CHECK(run_cli("generate --config " + (root / "bad.json").string() + " --out " + root.string()) == kExitConfig);
  CHECK(run_cli("generate --out /proc/gfss_unwritable") == kExitIo);
  CHECK(run_cli("adapt --out " + (root / "missing").string()) == kExitIo);
  CHECK(run_cli("frobnicate") == kExitConfig);
  fs::remove_all(root);
}
