#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "faultformer/cli.hpp"

namespace fs = std::filesystem;
using faultformer::cli::run_cli;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("faultformer_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    fs::create_directories(root_);
    auto r = cli({"synth", "--per-class", "12", "--length", "256", "--snr", "-2", "--seed", "3", "--out",
                  (root_ / "data").string(), "--quiet"});
    ASSERT_EQ(r.code, 0) << r.err;
    r = cli({"train", "--data", (root_ / "data").string(), "--epochs", "2", "--batch-size", "8", "--blocks", "2",
             "--embed-channels", "4", "--seed", "5", "--out", (root_ / "train").string(), "--quiet"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static fs::path root_;
};

fs::path CliTest::root_;

}  // namespace

TEST_F(CliTest, SynthWritesDatasetAndManifest) {
  const auto dir = root_ / "data";
  for (const char* f : {"train.csv", "test.csv", "impulses.csv", "dataset.json", "config.txt", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  auto meta = read_json(dir / "dataset.json");
  EXPECT_EQ(meta["length"], 256);
  EXPECT_EQ(meta["class_names"].size(), 4u);
  EXPECT_NEAR(meta["measured_snr_db"].get<double>(), -2.0, 0.5);
  auto manifest = read_json(dir / "manifest.json");
  EXPECT_EQ(manifest["command"], "synth");
  EXPECT_EQ(manifest["status"], "ok");
  EXPECT_EQ(manifest["seed"], 3);
  for (const auto& a : manifest["artifacts"]) EXPECT_TRUE(fs::exists(a.get<std::string>())) << a;
}

TEST_F(CliTest, TrainArtifactsAndEvalAgree) {
  const auto dir = root_ / "train";
  for (const char* f : {"model.ckpt", "report.json", "curves.csv", "config.txt", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  auto report = read_json(dir / "report.json");
  EXPECT_EQ(report["loss"].size(), 2u);
  auto r = cli({"eval", "--checkpoint", (dir / "model.ckpt").string(), "--data", (root_ / "data").string(), "--out",
                (root_ / "eval").string(), "--quiet"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto eval = read_json(root_ / "eval" / "eval.json");
  EXPECT_EQ(eval["accuracy"], report["final"]["accuracy"]);
  EXPECT_EQ(eval["j2"].get<double>(), 1.0 + eval["j1"].get<double>());
  EXPECT_TRUE(fs::exists(root_ / "eval" / "confusion.csv"));
}

TEST_F(CliTest, ConfigFileRerunIsBitIdentical) {
  auto r = cli({"train", "--config", (root_ / "train" / "config.txt").string(), "--out", (root_ / "rerun").string(),
                "--quiet"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(root_ / "rerun" / "model.ckpt"), slurp(root_ / "train" / "model.ckpt"));
  EXPECT_EQ(slurp(root_ / "rerun" / "report.json"), slurp(root_ / "train" / "report.json"));
}

TEST_F(CliTest, ReconstructFreshModelShowsIdentityDeviation) {
  auto r = cli({"reconstruct", "--data", (root_ / "data").string(), "--index", "0", "--out",
                (root_ / "recon").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"time.csv", "spectrum.csv", "filter.csv", "input.csv"}) {
    EXPECT_TRUE(fs::exists(root_ / "recon" / f)) << f;
  }
  const auto pos = r.out.find("||original|| = ");
  ASSERT_NE(pos, std::string::npos) << r.out;
  EXPECT_NEAR(std::stod(r.out.substr(pos + 16)), 0.1, 1e-9);
}

TEST_F(CliTest, AttentionDump) {
  auto r = cli({"attention", "--checkpoint", (root_ / "train" / "model.ckpt").string(), "--data",
                (root_ / "data").string(), "--block", "2", "--out", (root_ / "attn").string(), "--quiet"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto doc = read_json(root_ / "attn" / "attention.json");
  double total = 0.0;
  std::ifstream in(root_ / "attn" / "attention.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "position,weight,input_sample");
  while (std::getline(in, line)) total += std::stod(line.substr(line.find(',') + 1));
  EXPECT_NEAR(total, 1.0, 1e-9);
  // The default fourth block does not exist in a two-block model.
  r = cli({"attention", "--checkpoint", (root_ / "train" / "model.ckpt").string(), "--data",
           (root_ / "data").string(), "--out", (root_ / "attn4").string()});
  EXPECT_EQ(r.code, 2);
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(cli({}).code, 2);
  EXPECT_EQ(cli({"--help"}).code, 0);
  EXPECT_EQ(cli({"train", "--data", (root_ / "missing").string(), "--out", (root_ / "x1").string()}).code, 2);
  EXPECT_EQ(cli({"train", "--data", (root_ / "data").string(), "--epochs", "two", "--out", (root_ / "x2").string()})
                .code,
            2);

  std::ofstream(root_ / "bad.txt") << "epochz = 3\n";
  auto r = cli({"train", "--config", (root_ / "bad.txt").string(), "--out", (root_ / "x3").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("epochz"), std::string::npos) << r.err;
  EXPECT_EQ(read_json(root_ / "x3" / "manifest.json")["status"], "config_error");
}

TEST_F(CliTest, LengthMismatchNamesDimension) {
  auto r = cli({"synth", "--per-class", "4", "--length", "300", "--out", (root_ / "other").string(), "--quiet"});
  ASSERT_EQ(r.code, 0) << r.err;
  r = cli({"eval", "--checkpoint", (root_ / "train" / "model.ckpt").string(), "--data", (root_ / "other").string(),
           "--out", (root_ / "x4").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("input_length"), std::string::npos) << r.err;
}

TEST_F(CliTest, DivergenceExitsThreeAndKeepsLastCheckpoint) {
  auto r = cli({"train", "--data", (root_ / "data").string(), "--epochs", "3", "--batch-size", "8", "--blocks", "2",
                "--embed-channels", "4", "--lr", "1e200", "--out", (root_ / "nan").string(), "--quiet"});
  EXPECT_EQ(r.code, 3);
  EXPECT_TRUE(fs::exists(root_ / "nan" / "model.ckpt"));
  EXPECT_EQ(read_json(root_ / "nan" / "manifest.json")["status"], "numeric_failure");
}

TEST_F(CliTest, GradcheckCommand) {
  auto r = cli({"gradcheck", "--component", "gelu", "--component", "conv1d", "--out", (root_ / "gc").string()});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(root_ / "gc" / "gradcheck.csv"));
  r = cli({"gradcheck", "--inject-fault", "conv1d", "--component", "conv1d", "--out", (root_ / "gc2").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("conv1d"), std::string::npos) << r.err;
  EXPECT_EQ(cli({"gradcheck", "--inject-fault", "matmul", "--out", (root_ / "gc3").string()}).code, 2);
}

TEST_F(CliTest, OutDirFromEnvironment) {
  ::setenv("FAULTFORMER_OUT_DIR", (root_ / "env").c_str(), 1);
  auto r = cli({"gradcheck", "--component", "add", "--quiet"});
  ::unsetenv("FAULTFORMER_OUT_DIR");
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(root_ / "env" / "gradcheck" / "manifest.json"));
}
