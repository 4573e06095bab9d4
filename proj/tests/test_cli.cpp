#include <gtest/gtest.h>

#include <filesystem>
#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "ipvae/cli.hpp"

namespace {

using namespace ipvae;
namespace fs = std::filesystem;
using nlohmann::json;

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "ipvae");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch_dir() {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  const fs::path dir =
      fs::temp_directory_path() / "ipvae-tests" / (std::string(info->test_suite_name()) + "." + info->name());
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small OneHot run; returns the run directory.
fs::path train_small(const fs::path& out, const std::string& prior = "implicit", std::vector<std::string> extra = {}) {
  std::vector<std::string> args = {"train",         "--dataset", "onehot", "--prior",         prior,
                                   "--hidden",      "8",         "--ratio-hidden", "8",       "--max-epochs",
                                   "3",             "--warmup-epochs", "1", "--j2", "2", "--out", out.string()};
  args.insert(args.end(), extra.begin(), extra.end());
  const auto r = run(args);
  EXPECT_EQ(r.code, cli::kExitOk) << r.err;
  return out / ("onehot-" + prior + "-seed1");
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({}).code, cli::kExitUsage);
  EXPECT_EQ(run({"bake"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"train", "--no-such-flag"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"eval", "--samples", "many"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"export-latents"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"check-data"}).code, cli::kExitUsage);
}

TEST(Cli, HelpExitsZero) {
  const auto r = run({"--help"});
  EXPECT_EQ(r.code, cli::kExitOk);
  EXPECT_NE(r.out.find("train"), std::string::npos);
}

TEST(CliTrain, WritesCheckpointLogAndManifest) {
  const auto dir = train_small(scratch_dir());
  EXPECT_TRUE(fs::exists(dir / "checkpoint.ckpt"));
  EXPECT_EQ(count_lines(slurp(dir / "train_log.csv")), 4u);
  const auto manifest = json::parse(slurp(dir / "manifest.json"));
  EXPECT_EQ(manifest.at("input_hash").get<std::string>().size(), 40u);
  EXPECT_EQ(manifest.at("config").at("prior"), "implicit");
  EXPECT_EQ(manifest.at("config").at("seeds"), json::array({1}));
  EXPECT_EQ(manifest.at("epochs_run"), 3);
  EXPECT_EQ(manifest.at("architecture").at("latent_dim"), 2);
}

TEST(CliTrain, ManifestReproducesTheLogBitForBit) {
  const auto root = scratch_dir();
  const auto first = train_small(root / "a", "vamp", {"--k-mix", "4"});
  const auto r = run({"train", "--manifest", (first / "manifest.json").string(), "--out", (root / "b").string()});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  const auto second = root / "b" / "onehot-vamp-seed1";
  EXPECT_EQ(slurp(first / "train_log.csv"), slurp(second / "train_log.csv"));
  EXPECT_EQ(json::parse(slurp(first / "manifest.json")).at("input_hash"),
            json::parse(slurp(second / "manifest.json")).at("input_hash"));
}

TEST(CliTrain, ConfigFileWithFlagOverrides) {
  const auto root = scratch_dir();
  std::ofstream(root / "run.json") << R"({"dataset": "onehot", "prior": "standard", "hidden": 8, "max_epochs": 2,
    "warmup_epochs": 1, "seeds": [1, 2], "out_dir": ")" << (root / "out").string() << "\"}";
  const auto r = run({"train", "--config", (root / "run.json").string(), "--max-epochs", "1", "--warmup-epochs", "0"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  for (const char* seed : {"1", "2"}) {
    const auto log = slurp(root / "out" / (std::string("onehot-standard-seed") + seed) / "train_log.csv");
    EXPECT_EQ(count_lines(log), 2u);
  }
}

TEST(CliTrain, SeedListSpawnsSequentialRuns) {
  const auto root = scratch_dir();
  train_small(root, "standard", {"--seeds", "3,4"});
  EXPECT_TRUE(fs::exists(root / "onehot-standard-seed3" / "checkpoint.ckpt"));
  EXPECT_TRUE(fs::exists(root / "onehot-standard-seed4" / "checkpoint.ckpt"));
}

TEST(CliTrain, ConfigProblemsExitTwo) {
  const auto root = scratch_dir();
  std::ofstream(root / "bad.json") << R"({"dataset": "onehot", "momentum": 0.9})";
  auto r = run({"train", "--config", (root / "bad.json").string()});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find("momentum"), std::string::npos) << r.err;

  r = run({"train", "--config", (root / "missing.json").string()});
  EXPECT_EQ(r.code, cli::kExitUsage);
  r = run({"train", "--prior", "flat"});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find("prior"), std::string::npos);
  r = run({"train", "--lr", "fast"});
  EXPECT_EQ(r.code, cli::kExitUsage);
  r = run({"train", "--binarize", "maybe"});
  EXPECT_EQ(r.code, cli::kExitUsage);
  r = run({"train", "--seeds", "1,x"});
  EXPECT_EQ(r.code, cli::kExitUsage);
  r = run({"train", "--config", (root / "bad.json").string(), "--manifest", (root / "bad.json").string()});
  EXPECT_EQ(r.code, cli::kExitUsage);
}

TEST(CliTrain, MissingDatasetNamesThePath) {
  const auto root = scratch_dir();
  const auto r = run({"train", "--dataset", "mnist", "--data-root", (root / "nowhere").string()});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find((root / "nowhere" / "mnist").string()), std::string::npos) << r.err;
}

TEST(CliEval, ReportsElboAndImportanceSampledLikelihood) {
  const auto dir = train_small(scratch_dir());
  const auto ckpt = (dir / "checkpoint.ckpt").string();
  auto r = run({"eval", "--checkpoint", ckpt, "--out", (dir / "eval.json").string()});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  const auto report = json::parse(r.out);
  EXPECT_EQ(report.at("is_samples"), 10);
  EXPECT_EQ(report.at("points"), 1000);
  EXPECT_EQ(report.at("split"), "test");
  EXPECT_EQ(report.at("dataset"), "onehot");
  EXPECT_TRUE(report.at("estimator_dependent").get<bool>());
  EXPECT_LT(report.at("elbo").get<double>(), 0.0);
  EXPECT_EQ(json::parse(slurp(dir / "eval.json")), report);

  r = run({"eval", "--checkpoint", ckpt, "-S", "1", "--split", "valid"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_EQ(json::parse(r.out).at("points"), 100);
  EXPECT_EQ(run({"eval", "--checkpoint", ckpt}).out, run({"eval", "--checkpoint", ckpt}).out);
}

TEST(CliEval, GlobAggregatesSeeds) {
  const auto root = scratch_dir();
  train_small(root, "standard", {"--seeds", "1,2,3"});
  const auto r = run({"eval", "--glob", (root / "*" / "checkpoint.ckpt").string()});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  const auto summary = json::parse(r.out);
  EXPECT_EQ(summary.at("runs"), 3);
  EXPECT_EQ(summary.at("reports").size(), 3u);
  const auto& m = summary.at("metrics").at("is_log_likelihood");
  EXPECT_EQ(m.at("values").size(), 3u);
  EXPECT_NE(m.at("formatted").get<std::string>().find(" ± "), std::string::npos);
}

TEST(CliEval, Failures) {
  const auto root = scratch_dir();
  const auto dir = train_small(root / "runs", "standard");
  const auto ckpt = (dir / "checkpoint.ckpt").string();
  EXPECT_EQ(run({"eval"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"eval", "--checkpoint", ckpt, "--glob", ckpt}).code, cli::kExitUsage);
  EXPECT_EQ(run({"eval", "--glob", (root / "none*").string()}).code, cli::kExitUsage);
  EXPECT_EQ(run({"eval", "--checkpoint", (root / "missing.ckpt").string()}).code, cli::kExitUsage);
  EXPECT_EQ(run({"eval", "--checkpoint", ckpt, "-S", "0"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"eval", "--checkpoint", ckpt, "--split", "holdout"}).code, cli::kExitUsage);

  // A truncated checkpoint is a runtime failure.
  const auto bytes = slurp(ckpt);
  std::ofstream(root / "cut.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  EXPECT_EQ(run({"eval", "--checkpoint", (root / "cut.ckpt").string()}).code, cli::kExitFailure);

  // Architecture and dataset disagree on the data dimension.
  fs::create_directories(root / "data" / "freyfaces");
  for (const char* split : {"train.csv", "valid.csv", "test.csv"}) {
    std::ofstream out(root / "data" / "freyfaces" / split);
    for (std::size_t c = 0; c < 560; ++c) out << (c ? "," : "") << 0.5;
    out << '\n';
  }
  const auto r = run({"eval", "--checkpoint", ckpt, "--dataset", "freyfaces", "--data-root", (root / "data").string()});
  EXPECT_EQ(r.code, cli::kExitFailure);
  EXPECT_NE(r.err.find("dimension"), std::string::npos) << r.err;
}

TEST(CliExport, OneHotLatents) {
  const auto dir = train_small(scratch_dir());
  const auto ckpt = (dir / "checkpoint.ckpt").string();
  const auto csv = (dir / "latents.csv").string();
  auto r = run({"export-latents", "--checkpoint", ckpt, "--out", csv, "--seed", "7"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  const auto text = slurp(csv);
  EXPECT_EQ(text.substr(0, text.find('\n')), "z0,z1,label");
  EXPECT_EQ(count_lines(text), 1001u);
  std::set<std::string> labels;
  std::stringstream ss(text);
  std::string line;
  std::getline(ss, line);
  while (std::getline(ss, line)) labels.insert(line.substr(line.rfind(',') + 1));
  EXPECT_EQ(labels, (std::set<std::string>{"0", "1", "2", "3"}));
  EXPECT_TRUE(r.err.empty());

  r = run({"export-latents", "--checkpoint", ckpt, "--out", csv + ".2", "--seed", "7"});
  ASSERT_EQ(r.code, cli::kExitOk);
  EXPECT_EQ(slurp(csv + ".2"), text);
}

TEST(CliExport, WideLatentWarnsAndKeepsTwoColumns) {
  const auto dir = train_small(scratch_dir(), "standard", {"--latent-dim", "5"});
  const auto csv = (dir / "latents.csv").string();
  const auto r = run({"export-latents", "--checkpoint", (dir / "checkpoint.ckpt").string(), "--out", csv});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_NE(r.err.find("warning"), std::string::npos);
  const auto text = slurp(csv);
  EXPECT_EQ(text.substr(0, text.find('\n')), "z0,z1,label");
}

TEST(CliExport, UnwritableOutputFails) {
  const auto dir = train_small(scratch_dir(), "standard");
  const auto r = run({"export-latents", "--checkpoint", (dir / "checkpoint.ckpt").string(), "--out",
                      (dir / "no" / "such" / "dir" / "x.csv").string()});
  EXPECT_EQ(r.code, cli::kExitFailure);
}

TEST(CliCheckData, Outcomes) {
  auto r = run({"check-data", "--dataset", "onehot"});
  EXPECT_EQ(r.code, cli::kExitOk);
  EXPECT_NE(r.out.find("ok"), std::string::npos);

  const auto root = scratch_dir();
  r = run({"check-data", "--dataset", "mnist", "--data-root", root.string()});
  EXPECT_EQ(r.code, cli::kExitUsage);
  r = run({"check-data", "--dataset", "cifar"});
  EXPECT_EQ(r.code, cli::kExitUsage);

  fs::create_directories(root / "freyfaces");
  for (const char* split : {"train.csv", "valid.csv", "test.csv"}) {
    std::ofstream out(root / "freyfaces" / split);
    for (std::size_t c = 0; c < 560; ++c) out << (c ? "," : "") << 0.25;
    out << '\n';
  }
  r = run({"check-data", "--dataset", "freyfaces", "--data-root", root.string()});
  EXPECT_EQ(r.code, cli::kExitFailure);
  EXPECT_NE(r.out.find("mismatch: train"), std::string::npos) << r.out;
}

}  // namespace
