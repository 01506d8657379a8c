#include "probeguard/cli.hpp"

#include <gtest/gtest.h>

#include <cstdlib>

#include "json.hpp"
#include "probeguard/conformal.hpp"
#include "support/cli_workflow.hpp"

namespace probeguard {
namespace {

namespace fs = std::filesystem;
using testing::run_cli;

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = testing::scratch_dir("cli");
    testing::write_cli_inputs(root_ / "in");
  }
  static fs::path root_;
};
fs::path CliTest::root_;

TEST_F(CliTest, WorkflowSucceeds) {
  const auto out = root_ / "run";
  for (const auto& call : testing::cli_workflow(root_ / "in", out)) {
    const auto r = run_cli(call.args);
    EXPECT_EQ(r.code, cli::kExitOk) << call.name << ": " << r.err;
  }
  for (const char* f : {"labels.jsonl", "labeled.cpad", "model.json", "split.train.cpad",
                        "profile.json", "report.json", "report.csv", "decisions.jsonl",
                        "exit.json", "exit_rows.csv", "override.json", "sweep.csv",
                        "sweep.json"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  const auto exit = nlohmann::json::parse(testing::read_tree(out).at("exit.json"));
  EXPECT_GT(exit.at("cost_reduction").get<double>(), 0.5);
}

TEST_F(CliTest, RepeatedRunsAreByteIdentical) {
  const auto a = root_ / "a";
  const auto b = root_ / "b";
  for (const auto& call : testing::cli_workflow(root_ / "in", a)) run_cli(call.args);
  for (const auto& call : testing::cli_workflow(root_ / "in", b)) run_cli(call.args);
  const auto ta = testing::read_tree(a);
  const auto tb = testing::read_tree(b);
  ASSERT_EQ(ta.size(), tb.size());
  for (const auto& [name, bytes] : ta) {
    // Artifacts reference input paths only through their contents, so the
    // output directory name cannot leak in.
    EXPECT_EQ(bytes, tb.at(name)) << name;
  }
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run_cli({"train", "--bogus"}).code, cli::kExitUsageError);
  EXPECT_EQ(run_cli({"frobnicate"}).code, cli::kExitUsageError);
  EXPECT_EQ(run_cli({}).code, cli::kExitUsageError);
  EXPECT_EQ(run_cli({"calibrate", "--model", "m.json", "--valid", "v.cpad", "--alpha", "1.5"}).code,
            cli::kExitUsageError);
  const auto r = run_cli({"train"});
  EXPECT_EQ(r.code, cli::kExitUsageError);
  EXPECT_NE(r.err.find("--data"), std::string::npos);
}

TEST(Cli, HelpIsSuccess) {
  const auto r = run_cli({"--help"});
  EXPECT_EQ(r.code, cli::kExitOk);
  EXPECT_NE(r.out.find("simulate-exit"), std::string::npos);
}

TEST(Cli, MissingInputIsDataError) {
  const auto dir = testing::scratch_dir("cli-missing");
  const auto r = run_cli({"train", "--out-dir", dir.string(), "--data",
                          (dir / "nope.cpad").string()});
  EXPECT_EQ(r.code, cli::kExitDataError);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
}

TEST(Cli, DeferAllWarnsButSucceeds) {
  const auto dir = testing::scratch_dir("cli-defer");
  auto data = testing::separable_2d(300, 0.1, 4);
  save_dataset(data, dir / "train.cpad");
  for (auto& r : data.records) r.label = 1 - r.label;  // every prediction now wrong
  save_dataset(data, dir / "valid.cpad");
  const auto d = dir.string();
  ASSERT_EQ(run_cli({"train", "--out-dir", d, "--data", d + "/train.cpad"}).code, 0);
  const auto r = run_cli({"calibrate", "--out-dir", d, "--model", d + "/model.json", "--valid",
                          d + "/valid.cpad", "--alpha", "0.9"});
  EXPECT_EQ(r.code, cli::kExitOk);
  EXPECT_NE(r.err.find("warning"), std::string::npos);
  EXPECT_TRUE(load_profile(dir / "profile.json").defer_all());
}

TEST(Cli, OutputDirectoryFromEnvironment) {
  const auto env_dir = testing::scratch_dir("cli-env");
  const auto flag_dir = testing::scratch_dir("cli-flag");
  save_dataset(testing::separable_2d(100, 0.1, 4), env_dir / "d.cpad");
  const auto data = (env_dir / "d.cpad").string();
  ::setenv("PROBEGUARD_OUT", env_dir.string().c_str(), 1);
  EXPECT_EQ(run_cli({"train", "--data", data, "--epochs", "5"}).code, 0);
  EXPECT_TRUE(fs::exists(env_dir / "model.json"));
  EXPECT_EQ(run_cli({"train", "--data", data, "--epochs", "5", "--out-dir", flag_dir.string()})
                .code,
            0);
  ::unsetenv("PROBEGUARD_OUT");
  EXPECT_TRUE(fs::exists(flag_dir / "model.json"));
}

}  // namespace
}  // namespace probeguard
