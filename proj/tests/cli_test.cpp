// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sfa/cli.hpp"

namespace sfa::cli {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "sfa_cli");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path last_line_path(const std::string& out) {
  std::string s = out;
  while (!s.empty() && s.back() == '\n') s.pop_back();
  return fs::path(s.substr(s.rfind('\n') == std::string::npos ? 0 : s.rfind('\n') + 1));
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("sfa_cli_test_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  std::vector<std::string> tiny(std::vector<std::string> args) const {
    for (const char* s : {"--out", root_.c_str(), "--set", "data.n_train=50", "--set",
                          "data.n_dev=20", "--set", "data.n_test=20", "--set", "train.epochs=2",
                          "--set", "train.latency_pairs=0"})
      args.emplace_back(s);
    return args;
  }

  fs::path root_;
};

TEST_F(CliTest, HelpListsEveryFlagOfEverySubcommand) {
  const std::vector<std::pair<std::string, std::vector<std::string>>> expected{
      {"train", {"--config", "--out", "--set", "--verbose"}},
      {"eval", {"--checkpoint", "--config", "--out", "--set", "--verbose"}},
      {"gradcheck", {"--tol", "--config", "--out", "--set", "--verbose"}},
      {"ablate", {"--components", "--config", "--out", "--set", "--verbose"}},
      {"heatmap", {"--checkpoint", "--a", "--b", "--id", "--config", "--out", "--set"}},
      {"bottleneck-check", {"--D", "--r", "--r1", "--r2", "--L", "--log-base", "--override", "--json"}},
      {"param-count", {"--json", "--config", "--out", "--set", "--verbose"}},
  };
  for (const auto& [sub, flags] : expected) {
    const Result r = run({sub, "--help"});
    EXPECT_EQ(r.code, kOk) << sub;
    for (const auto& f : flags) EXPECT_NE(r.out.find(f), std::string::npos) << sub << " " << f;
  }
  const Result top = run({"--help"});
  EXPECT_EQ(top.code, kOk);
  for (const auto& [sub, flags] : expected) EXPECT_NE(top.out.find(sub), std::string::npos);
}

TEST_F(CliTest, UsageErrorsExitTwo) {
  EXPECT_EQ(run({}).code, kUsage);
  EXPECT_EQ(run({"frobnicate"}).code, kUsage);
  EXPECT_EQ(run({"train", "--no-such-flag"}).code, kUsage);
  EXPECT_EQ(run({"bottleneck-check", "--D", "32"}).code, kUsage);
  EXPECT_EQ(run({"bottleneck-check", "--D", "32", "--L", "5", "--log-base", "1"}).code, kUsage);
}

TEST_F(CliTest, MissingConfigFileNamesThePath) {
  const std::string path = (root_ / "absent.json").string();
  const Result r = run({"train", "--config", path});
  EXPECT_EQ(r.code, kUsage);
  EXPECT_NE(r.err.find(path), std::string::npos) << r.err;
}

TEST_F(CliTest, UnknownOverrideKeyRejected) {
  const Result r = run({"param-count", "--set", "model.depth=3"});
  EXPECT_EQ(r.code, kUsage);
  EXPECT_NE(r.err.find("model.depth"), std::string::npos);
  EXPECT_EQ(run({"param-count", "--set", "model.D=wide"}).code, kUsage);
}

TEST_F(CliTest, InvalidConfigFileRejected) {
  const fs::path p = root_ / "bad.json";
  std::ofstream(p) << "{\"model\": {\"D\": 32,}";
  EXPECT_EQ(run({"param-count", "--config", p.string()}).code, kUsage);
  std::ofstream(p, std::ios::trunc) << "{\"model\": {\"D\": 16}}";
  const Result ok = run({"param-count", "--config", p.string()});
  EXPECT_EQ(ok.code, kOk) << ok.err;
}

TEST_F(CliTest, BottleneckCheckPrintsMarginsAndExitCodes) {
  const Result ok = run({"bottleneck-check", "--D", "256", "--r1", "2", "--r2", "2", "--L", "40"});
  EXPECT_EQ(ok.code, kOk);
  EXPECT_NE(ok.out.find("margin"), std::string::npos);
  EXPECT_NE(ok.out.find("result: pass"), std::string::npos);

  const Result bad = run({"bottleneck-check", "--D", "32", "--r1", "8", "--r2", "2", "--L", "12"});
  EXPECT_EQ(bad.code, kCheckFailed);
  EXPECT_NE(bad.out.find("FAIL"), std::string::npos);
  const fs::path json = root_ / "b.json";
  const Result over = run({"bottleneck-check", "--D", "32", "--r1", "8", "--r2", "2", "--L", "12",
                           "--override", "--json", json.string()});
  EXPECT_EQ(over.code, kOk);
  const Json j = Json::parse(slurp(json));
  EXPECT_FALSE(j["all_pass"].get<bool>());
  EXPECT_DOUBLE_EQ(j["reduced_dim"].get<double>(), 4.0);
}

TEST_F(CliTest, ParamCountReportsBudget) {
  const fs::path json = root_ / "p.json";
  const Result r = run({"param-count", "--json", json.string()});
  EXPECT_EQ(r.code, kOk);
  const Json j = Json::parse(slurp(json));
  EXPECT_EQ(j["base"], 24450);
  EXPECT_EQ(j["added"], 2128);
  EXPECT_GT(j["added_percent"].get<double>(), 5.0);
  EXPECT_LT(j["added_percent"].get<double>(), 10.0);
}

TEST_F(CliTest, GradcheckOnDefaultBlockPasses) {
  const Result r = run({"gradcheck", "--tol", "1e-4", "--out", root_.string()});
  ASSERT_EQ(r.code, kOk) << r.err;
  const fs::path file = last_line_path(r.out) / "gradcheck.json";
  ASSERT_TRUE(fs::exists(file));
  const Json j = Json::parse(slurp(file));
  EXPECT_TRUE(j["pass"].get<bool>());
  EXPECT_EQ(j["checks"].size(), 5u);
  // An unreachable tolerance is reported as a failed check.
  EXPECT_EQ(run({"gradcheck", "--tol", "1e-12", "--out", root_.string()}).code, kCheckFailed);
}

TEST_F(CliTest, TrainWritesRunDirectoryAndIsDeterministic) {
  const Result a = run(tiny({"train"}));
  ASSERT_EQ(a.code, kOk) << a.err;
  const fs::path dir_a = last_line_path(a.out);
  for (const char* f : {"config.json", "metrics.csv", "report.json", "checkpoint.json"})
    EXPECT_TRUE(fs::exists(dir_a / f)) << f;
  const Json report = Json::parse(slurp(dir_a / "report.json"));
  EXPECT_EQ(report["epochs"].size(), 2u);
  EXPECT_EQ(report["config"]["data"]["n_train"], 50);
  EXPECT_EQ(report["seeds"]["init"], 1);
  EXPECT_TRUE(report["gradcheck"]["applicable"].get<bool>());
  EXPECT_EQ(dir_a.filename().string().substr(0, 16), config_hash(report["config"]));

  const Result b = run(tiny({"train"}));
  ASSERT_EQ(b.code, kOk);
  const fs::path dir_b = last_line_path(b.out);
  EXPECT_NE(dir_a, dir_b);
  EXPECT_EQ(slurp(dir_a / "metrics.csv"), slurp(dir_b / "metrics.csv"));
  EXPECT_EQ(slurp(dir_a / "checkpoint.json"), slurp(dir_b / "checkpoint.json"));
}

TEST_F(CliTest, BottleneckViolationWithoutOverrideExitsOne) {
  auto args = tiny({"train"});
  args.insert(args.end(), {"--set", "train.bottleneck_override=false"});
  const Result r = run(args);
  EXPECT_EQ(r.code, kCheckFailed);
  EXPECT_NE(r.err.find("bottleneck"), std::string::npos) << r.err;
}

TEST_F(CliTest, DivergedRunExitsOne) {
  auto args = tiny({"train"});
  args.insert(args.end(), {"--set", "optim.lr=1e308", "--set", "model.block=none"});
  EXPECT_EQ(run(args).code, kCheckFailed);
}

TEST_F(CliTest, EvalAndHeatmapFromCheckpoint) {
  const Result t = run(tiny({"train"}));
  ASSERT_EQ(t.code, kOk);
  const std::string ckpt = (last_line_path(t.out) / "checkpoint.json").string();
  const Json trained = Json::parse(slurp(last_line_path(t.out) / "report.json"));

  const Result e = run(tiny({"eval", "--checkpoint", ckpt}));
  ASSERT_EQ(e.code, kOk) << e.err;
  const Json ev = Json::parse(slurp(last_line_path(e.out) / "report.json"));
  EXPECT_EQ(ev["test"]["accuracy"], trained["test"]["accuracy"]);

  const Result h = run(tiny({"heatmap", "--checkpoint", ckpt, "--a", "1 3 40", "--b", "2,60", "--id", "demo"}));
  ASSERT_EQ(h.code, kOk) << h.err;
  const fs::path csv = last_line_path(h.out);
  EXPECT_EQ(csv.filename(), "heatmap_demo.csv");
  const std::string body = slurp(csv);
  EXPECT_EQ(body.substr(0, body.find('\n')), "token,s0b,w60");
  EXPECT_EQ(std::count(body.begin(), body.end(), '\n'), 4);

  EXPECT_EQ(run(tiny({"heatmap", "--checkpoint", ckpt, "--a", "1 x"})).code, kUsage);
  EXPECT_EQ(run(tiny({"heatmap", "--checkpoint", ckpt, "--a", "1", "--b", "500"})).code, kUsage);
  EXPECT_EQ(run({"eval", "--checkpoint", (root_ / "none.json").string()}).code, kUsage);
}

TEST_F(CliTest, AblateWritesSeriesAndSummary) {
  auto args = tiny({"ablate", "--components", "selection"});
  args.insert(args.end(), {"--set", "experiment.seeds=[1]"});
  const Result r = run(args);
  ASSERT_EQ(r.code, kOk) << r.err;
  const fs::path dir = last_line_path(r.out);
  const Json j = Json::parse(slurp(dir / "ablation.json"));
  ASSERT_EQ(j["variants"].size(), 2u);
  EXPECT_EQ(j["variants"][1]["name"], "no_selection");
  EXPECT_EQ(j["variants"][1]["runs"][0]["coefficient_spread"], 0.0);
  EXPECT_NE(slurp(dir / "ablation.csv").find("no_selection,1,2,"), std::string::npos);
  EXPECT_EQ(run(tiny({"ablate", "--components", "dropout"})).code, kUsage);
}

TEST_F(CliTest, OutputRootFromEnvironment) {
  const fs::path env_root = root_ / "from_env";
  ::setenv(kOutputRootEnv, env_root.c_str(), 1);
  const Result r = run({"gradcheck", "--set", "model.block=fa"});
  ::unsetenv(kOutputRootEnv);
  ASSERT_EQ(r.code, kOk) << r.err;
  EXPECT_EQ(last_line_path(r.out).parent_path(), env_root);
}

// The shipped schema describes exactly the keys and defaults of the built-in config.
void compare_with_schema(const Json& defaults, const Json& schema, const std::string& where) {
  ASSERT_EQ(schema.value("additionalProperties", true), false) << where;
  const Json& props = schema.at("properties");
  EXPECT_EQ(props.size(), defaults.size()) << where;
  for (const auto& [key, value] : defaults.items()) {
    ASSERT_TRUE(props.contains(key)) << where << "." << key;
    if (value.is_object()) compare_with_schema(value, props[key], where + "." + key);
    else EXPECT_EQ(props[key].at("default"), value) << where << "." << key;
  }
}

TEST(Schema, MatchesBuiltInDefaults) {
  std::ifstream in(std::string(SFA_SOURCE_DIR) + "/docs/config.schema.json");
  ASSERT_TRUE(in.good());
  compare_with_schema(default_config_json(), Json::parse(in), "config");
}

}  // namespace
}  // namespace sfa::cli
