#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "sslgrade/data/image.hpp"
#include "sslgrade/data/manifest.hpp"

using namespace sslgrade;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string err;
};

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("sslgrade_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Runs the CLI with stdout discarded and stderr captured.
Run sslgrader(const std::string& args, const fs::path& cwd) {
  const auto err = cwd / "stderr.txt";
  const std::string cmd =
      "cd '" + cwd.string() + "' && '" SSLGRADER_EXE "' " + args + " > /dev/null 2> '" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = slurp(err);
  return r;
}

const std::string kMiniature =
    "--synthetic 6 --target 32 --stem 4 --blocks 4,8 --dense 16 --levels 21 --pretrain-epochs 2 "
    "--finetune-epochs 3 --tsne-iterations 60";

}  // namespace

TEST(Cli, PatchifyOneLargeImageGivesNineRows) {
  const auto dir = scratch("patchify");
  fs::create_directories(dir / "img");
  Image img(1024, 1024, 3, 128.0f);
  write_image(img, dir / "img" / "slide.png");
  const auto r = sslgrader("patchify --input img --patch 512 --overlap 0.5 --target 32 --run-dir out", dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = read_manifest(dir / "out" / "manifest.csv");
  EXPECT_EQ(rows.size(), 9u);
  for (const auto& row : rows) {
    EXPECT_EQ(row.source_id, "slide");
    EXPECT_EQ(read_image(dir / "out" / row.patch_path).width, 32u);
  }
  EXPECT_TRUE(fs::exists(dir / "out" / "config.json"));
  EXPECT_TRUE(fs::exists(dir / "out" / "log.txt"));
}

TEST(Cli, EvalWithoutCheckpointNamesTheFile) {
  const auto dir = scratch("eval_missing");
  ASSERT_EQ(sslgrader("synth-data --per-class 2 --run-dir data", dir).code, 0);
  const auto r = sslgrader("eval --manifest data/manifest.csv --classifier nope.ckpt --run-dir out", dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("nope.ckpt"), std::string::npos) << r.err;
}

TEST(Cli, UsageErrorsExitOne) {
  const auto dir = scratch("usage");
  EXPECT_EQ(sslgrader("pipeline --no-such-flag", dir).code, 1);
  EXPECT_EQ(sslgrader("", dir).code, 1);
  EXPECT_EQ(sslgrader("frobnicate", dir).code, 1);
  EXPECT_EQ(sslgrader("patchify --patch 512", dir).code, 1);  // --input is required
  EXPECT_EQ(sslgrader("--help", dir).code, 0);
}

TEST(Cli, FlagsOverrideConfigFileOverrideDefaults) {
  const auto dir = scratch("precedence");
  {
    std::ofstream cfg(dir / "cfg.json");
    cfg << R"({"seed": 5, "synthetic": 3, "pretrain_lr": 0.25})";
  }
  ASSERT_EQ(sslgrader("synth-data --config cfg.json --seed 9 --run-dir out", dir).code, 0);
  const auto snap = nlohmann::json::parse(slurp(dir / "out" / "config.json"));
  EXPECT_EQ(snap.at("seed"), 9);                // flag wins
  EXPECT_EQ(snap.at("synthetic"), 3);           // config file wins over default
  EXPECT_EQ(snap.at("pretrain_lr"), 0.25);
  EXPECT_EQ(snap.at("finetune_lr"), 0.5);       // default
  EXPECT_EQ(read_manifest(dir / "out" / "manifest.csv").size(), 12u);

  std::ofstream bad(dir / "bad.json");
  bad << R"({"sed": 1})";
  bad.close();
  const auto r = sslgrader("synth-data --config bad.json --run-dir out2", dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("sed"), std::string::npos) << r.err;
}

TEST(Cli, ExistingRunDirectoryIsRefused) {
  const auto dir = scratch("exists");
  fs::create_directories(dir / "out");
  const auto r = sslgrader("synth-data --per-class 1 --run-dir out", dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("already exists"), std::string::npos) << r.err;
}

TEST(Cli, TimestampedRunDirectoriesDoNotCollide) {
  const auto dir = scratch("stamped");
  ASSERT_EQ(sslgrader("synth-data --per-class 1 --runs-root runs", dir).code, 0);
  ASSERT_EQ(sslgrader("synth-data --per-class 1 --runs-root runs", dir).code, 0);
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir / "runs")) n += e.path().filename().string().starts_with("synth-data-");
  EXPECT_EQ(n, 2u);
}

TEST(Cli, TransferDeeperThanModelIsRejected) {
  const auto dir = scratch("levels");
  auto args = kMiniature;
  args.replace(args.find("--levels 21"), 11, "--levels 29");
  const auto r = sslgrader("pipeline " + args + " --run-dir out", dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("29"), std::string::npos) << r.err;
}

TEST(Cli, DivergentTrainingExitsThree) {
  const auto dir = scratch("diverge");
  const auto r = sslgrader("pipeline " + kMiniature + " --pretrain-lr 1e30 --run-dir out", dir);
  EXPECT_EQ(r.code, 3) << r.err;
}

TEST(Cli, PipelineRerunFromSnapshotIsByteIdentical) {
  const auto dir = scratch("rerun");
  const auto a = sslgrader("pipeline " + kMiniature + " --seed 4 --run-dir a", dir);
  ASSERT_EQ(a.code, 0) << a.err;
  const auto b = sslgrader("pipeline --config a/config.json --run-dir b", dir);
  ASSERT_EQ(b.code, 0) << b.err;
  std::size_t compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
    if (!e.is_regular_file() || e.path().filename() == "log.txt") continue;
    const auto rel = fs::relative(e.path(), dir / "a");
    ASSERT_TRUE(fs::exists(dir / "b" / rel)) << rel;
    EXPECT_EQ(slurp(e.path()), slurp(dir / "b" / rel)) << rel;
    ++compared;
  }
  EXPECT_GT(compared, 20u);
  for (const char* f : {"eval/metrics.json", "pretrain/cae.ckpt", "eval/tsne.csv"})
    EXPECT_TRUE(fs::exists(dir / "a" / f)) << f;
}
