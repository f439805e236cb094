#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>
#include <unistd.h>

#include "xrdattn/cli.hpp"

namespace xrdattn::cli {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

std::size_t line_count(const fs::path& p) {
  std::ifstream is(p);
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) ++n;
  return n;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(fs::temp_directory_path() / ("xrdattn_cli_test_" + std::to_string(::getpid())));
    fs::create_directories(*dir_);
    ASSERT_EQ(run_cli({"synth", "--out", (*dir_ / "both").string(), "--n", "120", "--rate", "1.0", "--rate", "0.2",
                       "--seed", "3"})
                  .code,
              kOk);
    ASSERT_EQ(run_cli({"synth", "--out", (*dir_ / "fast").string(), "--n", "120", "--seed", "3"}).code, kOk);
    ASSERT_EQ(run_cli({"train", "--case", "1", "--data", (*dir_ / "fast").string(), "--out",
                       (*dir_ / "c1.xaw").string(), "--epochs", "1", "--batch", "16", "--quiet"})
                  .code,
              kOk);
  }
  static void TearDownTestSuite() {
    fs::remove_all(*dir_);
    delete dir_;
  }
  static fs::path path(const std::string& name) { return *dir_ / name; }
  static fs::path* dir_;
};
fs::path* Cli::dir_ = nullptr;

TEST_F(Cli, SynthWritesOneCsvPerRate) {
  EXPECT_TRUE(fs::exists(path("both/manifest.json")));
  EXPECT_EQ(line_count(path("both/rate_1.0C.csv")), 121u);
  EXPECT_EQ(line_count(path("both/rate_0.2C.csv")), 121u);
  EXPECT_FALSE(fs::exists(path("fast/rate_0.2C.csv")));
}

TEST_F(Cli, SynthIsByteIdenticalForSameSeed) {
  auto r = run_cli({"synth", "--out", path("again").string(), "--n", "120", "--seed", "3"});
  ASSERT_EQ(r.code, kOk);
  EXPECT_EQ(slurp(path("again/rate_1.0C.csv")), slurp(path("fast/rate_1.0C.csv")));
  EXPECT_EQ(slurp(path("again/manifest.json")), slurp(path("fast/manifest.json")));
  EXPECT_NE(r.out.find("charge-1st-half=30"), std::string::npos);
}

TEST_F(Cli, MissingRequiredFlagIsUsageError) {
  auto r = run_cli({"synth", "--n", "10"});
  EXPECT_EQ(r.code, kUsage);
  EXPECT_NE(r.err.find("--out"), std::string::npos);
  EXPECT_EQ(run_cli({}).code, kUsage);
  EXPECT_EQ(run_cli({"bogus"}).code, kUsage);
  EXPECT_EQ(run_cli({"synth", "--out", path("x").string(), "--rate", "0.5"}).code, kUsage);
  EXPECT_EQ(run_cli({"--help"}).code, kOk);
}

TEST_F(Cli, MissingDatasetIsIoError) {
  auto r = run_cli({"train", "--case", "1", "--data", path("absent").string(), "--out", path("x.xaw").string()});
  EXPECT_EQ(r.code, kIo);
  EXPECT_FALSE(r.err.empty());
}

TEST_F(Cli, CaseThreeNeedsBothRates) {
  auto r = run_cli({"train", "--case", "3", "--data", path("fast").string(), "--out", path("c3.xaw").string(),
                    "--epochs", "1", "--quiet"});
  EXPECT_EQ(r.code, kUsage);
  EXPECT_NE(r.err.find("0.2"), std::string::npos);
}

TEST_F(Cli, TrainWritesCheckpointAndMetrics) {
  ASSERT_TRUE(fs::exists(path("c1.xaw")));
  auto j = nlohmann::json::parse(slurp(path("metrics.json")));
  EXPECT_EQ(j.at("case"), 1);
  EXPECT_EQ(j.at("history").size(), 1u);
  EXPECT_TRUE(j.at("validation").at("mode_accuracy").is_null());
}

TEST_F(Cli, TrainIsDeterministic) {
  auto args = [&](const std::string& tag) {
    return std::vector<std::string>{"train", "--case", "3", "--data", path("both").string(), "--out",
                                    path(tag + ".xaw").string(), "--metrics", path(tag + ".json").string(),
                                    "--epochs", "2", "--batch", "16", "--quiet"};
  };
  ASSERT_EQ(run_cli(args("a")).code, kOk);
  ASSERT_EQ(run_cli(args("b")).code, kOk);
  EXPECT_EQ(slurp(path("a.json")), slurp(path("b.json")));
  EXPECT_EQ(slurp(path("a.xaw")), slurp(path("b.xaw")));
}

TEST_F(Cli, EvalSchema) {
  auto r = run_cli({"eval", "--model", path("c1.xaw").string(), "--data", path("fast").string()});
  ASSERT_EQ(r.code, kOk) << r.err;
  auto j = nlohmann::json::parse(r.out);
  for (const char* key : {"voltage_mae_volts", "voltage_mae_norm", "mode_accuracy", "rate_accuracy"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_TRUE(j.at("mode_accuracy").is_null());
  EXPECT_TRUE(j.at("rate_accuracy").is_null());
  EXPECT_GE(j.at("voltage_mae_norm").get<double>(), 0.0);
}

TEST_F(Cli, EvalCaseMismatchIsCompatibilityError) {
  auto r = run_cli({"eval", "--model", path("c1.xaw").string(), "--data", path("both").string(), "--case", "3"});
  EXPECT_EQ(r.code, kCompat);
}

TEST_F(Cli, CorruptCheckpointIsIoClassError) {
  std::ofstream(path("junk.xaw"), std::ios::binary) << "XAW1\x05";
  EXPECT_EQ(run_cli({"eval", "--model", path("junk.xaw").string(), "--data", path("fast").string()}).code, kIo);
  std::ofstream(path("alien.xaw"), std::ios::binary) << "ABCD0000";
  EXPECT_EQ(run_cli({"eval", "--model", path("alien.xaw").string(), "--data", path("fast").string()}).code, kCompat);
}

TEST_F(Cli, VawEmitsOverlayAndReport) {
  auto r = run_cli({"vaw", "--model", path("c1.xaw").string(), "--data", path("fast").string(), "--sample", "0",
                    "--sample", "1", "--csv", path("v.csv").string(), "--svg", path("v.svg").string(), "--report"});
  ASSERT_EQ(r.code, kOk) << r.err;
  EXPECT_EQ(line_count(path("v.csv")), 1u + 2u * 256u);
  EXPECT_NE(slurp(path("v.svg")).find("<svg"), std::string::npos);
  auto j = nlohmann::json::parse(r.out);
  const std::string dump = j.dump();
  for (const char* name : {"NMC(003)", "C(002)", "Al(111)", "background"}) {
    EXPECT_NE(dump.find(name), std::string::npos) << name;
  }
}

TEST_F(Cli, VawSampleOutOfRangeIsUsageError) {
  auto r = run_cli({"vaw", "--model", path("c1.xaw").string(), "--data", path("fast").string(), "--sample",
                    "100000"});
  EXPECT_EQ(r.code, kUsage);
}

TEST_F(Cli, ConfigFileAndFlagPrecedence) {
  std::ofstream(path("cfg.json")) << R"({"epochs": 3, "batch": 16, "train": {"seed": 5}, "quiet": true})";
  auto r = run_cli({"train", "--config", path("cfg.json").string(), "--case", "1", "--data", path("fast").string(),
                    "--out", path("cfg.xaw").string(), "--metrics", path("cfg_m.json").string(), "--epochs", "1"});
  ASSERT_EQ(r.code, kOk) << r.err;
  auto j = nlohmann::json::parse(slurp(path("cfg_m.json")));
  EXPECT_EQ(j.at("history").size(), 1u);
  EXPECT_EQ(j.at("train_config").at("seed"), 5);
  EXPECT_EQ(j.at("train_config").at("batch_size"), 16);

  std::ofstream(path("bad_cfg.json")) << R"({"train": {"no_such_option": 1}})";
  EXPECT_EQ(run_cli({"train", "--config", path("bad_cfg.json").string(), "--case", "1", "--data",
                     path("fast").string(), "--out", path("bad.xaw").string()})
                .code,
            kUsage);
}

TEST_F(Cli, DivergenceIsNumericError) {
  auto r = run_cli({"train", "--case", "1", "--data", path("fast").string(), "--out", path("nan.xaw").string(),
                    "--epochs", "3", "--batch", "4", "--lr", "1e300", "--quiet"});
  EXPECT_EQ(r.code, kNumeric);
  EXPECT_NE(r.err.find("epoch"), std::string::npos);
}

TEST_F(Cli, GradcheckPasses) {
  auto r = run_cli({"gradcheck", "--seed", "2"});
  EXPECT_EQ(r.code, kOk);
  EXPECT_NE(r.out.find("max relative error"), std::string::npos);
}

}  // namespace
}  // namespace xrdattn::cli
