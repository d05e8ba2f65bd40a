#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "json.hpp"
#include "s3d/imagery.hpp"

using namespace s3d;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string output;
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string(S3D_CLI) + " " + args + " 2>&1";
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

const char* kTinyConfig = R"({
  "seed": 5,
  "data": {"count": 10, "resolution": 16},
  "unet": {"input_size": 16, "depth": 2, "base_channels": 4, "style_rows": 3, "style_dim": 8},
  "teacher": {"latent_dim": 4, "plane_res": 4, "plane_channels": 4, "hidden": 8,
              "feature_dim": 2, "encoder_channels": [4, 4], "pretrain_steps": 2,
              "pretrain_samples": 4, "pretrain_render_size": 8},
  "train": {"steps": 3, "batch_size": 2},
  "render": {"samples_per_ray": 6, "image_size": 8, "orbit_frames": 3},
  "tsne": {"perplexity": 2, "iterations": 40}
})";

std::map<std::string, std::vector<std::uint8_t>> snapshot(const fs::path& root) {
  std::map<std::string, std::vector<std::uint8_t>> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = read_file(e.path());
  }
  return files;
}

// Runs the whole command chain under `root`.
void pipeline(const fs::path& root) {
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string cfg = (root / "cfg.json").string();
  std::ofstream(cfg) << kTinyConfig;
  const std::string data = (root / "data").string();
  const std::string run_dir = (root / "run").string();
  const std::string ckpt = run_dir + "/final";

  RunResult r = run("gen-data --config " + cfg + " --out " + data);
  ASSERT_EQ(r.code, 0) << r.output;
  r = run("train --config " + cfg + " --data " + data + " --out " + run_dir);
  ASSERT_EQ(r.code, 0) << r.output;
  ASSERT_TRUE(fs::exists(run_dir + "/teacher/manifest.json"));
  ASSERT_TRUE(fs::exists(run_dir + "/train_log.csv"));
  ASSERT_TRUE(fs::exists(run_dir + "/config.json"));

  r = run("eval --checkpoint " + ckpt + " --data " + data + " --split train --out " +
          (root / "eval.json").string());
  ASSERT_EQ(r.code, 0) << r.output;

  r = run("infer --config " + cfg + " --checkpoint " + ckpt + " --sketch " + data +
          "/test/sketch/00000.pgm --out " + (root / "infer").string());
  ASSERT_EQ(r.code, 0) << r.output;

  r = run("render --config " + cfg + " --teacher " + run_dir + "/teacher --mask " + data +
          "/test/mask/00000.pgm --frames 2 --latent-seed 4 --out " + (root / "render").string());
  ASSERT_EQ(r.code, 0) << r.output;

  r = run("tsne --config " + cfg + " --checkpoint " + ckpt + " --data " + data +
          " --split train --out " + (root / "tsne").string());
  ASSERT_EQ(r.code, 0) << r.output;

  r = run("augment-preview --sketch " + data + "/train/sketch/00000.pgm --seed 3 --out " +
          (root / "aug").string());
  ASSERT_EQ(r.code, 0) << r.output;
}

}  // namespace

TEST(Cli, HelpForEverySubcommand) {
  const std::map<std::string, std::vector<std::string>> flags = {
      {"gen-data", {"--config", "--out", "--count", "--seed"}},
      {"train", {"--config", "--data", "--out"}},
      {"eval", {"--checkpoint", "--data", "--split", "--out"}},
      {"infer", {"--config", "--checkpoint", "--sketch", "--out", "--latent-seed", "--frames"}},
      {"render", {"--config", "--teacher", "--mask", "--out", "--latent-seed", "--frames"}},
      {"tsne", {"--config", "--checkpoint", "--data", "--split", "--out"}},
      {"augment-preview", {"--config", "--sketch", "--out", "--seed"}},
      {"selftest", {"--quick"}},
  };
  for (const auto& [sub, expected] : flags) {
    const RunResult r = run(sub + " --help");
    EXPECT_EQ(r.code, 0) << sub;
    for (const std::string& f : expected) EXPECT_NE(r.output.find(f), std::string::npos) << sub << " " << f;
  }
  EXPECT_EQ(run("--help").code, 0);
}

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("bogus").code, 1);
  const RunResult r = run("gen-data --out /tmp/x --frobnicate 3");
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(r.output.empty());
  EXPECT_EQ(run("eval --data /tmp").code, 1);  // missing required flag
}

TEST(Cli, MissingConfigExitsOneNamingPath) {
  const RunResult r = run("gen-data --config /nonexistent/cfg.json --out /tmp/s3d_cli_never");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("/nonexistent/cfg.json"), std::string::npos) << r.output;
}

TEST(Cli, RuntimeErrorsExitTwo) {
  const RunResult r = run("eval --checkpoint /nonexistent/ckpt --data /nonexistent/data");
  EXPECT_EQ(r.code, 2) << r.output;
}

TEST(Cli, PipelineOutputsAndByteIdenticalRerun) {
  const fs::path a = fs::temp_directory_path() / "s3d_cli_a";
  const fs::path b = fs::temp_directory_path() / "s3d_cli_b";
  pipeline(a);
  if (HasFatalFailure()) return;
  pipeline(b);
  if (HasFatalFailure()) return;

  const nlohmann::json j = nlohmann::json::parse(std::ifstream(a / "eval.json"));
  for (const char* key : {"miou", "map", "per_class_iou", "per_class_ap", "n_images"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_EQ(j["n_images"], 8);
  EXPECT_EQ(j["per_class_iou"].size(), 6u);

  EXPECT_TRUE(fs::exists(a / "infer" / "mask.pgm"));
  EXPECT_TRUE(fs::exists(a / "infer" / "mask.ppm"));
  EXPECT_TRUE(fs::exists(a / "infer" / "frontal.ppm"));
  for (int k = 0; k < 3; ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%03d.ppm", k);
    EXPECT_TRUE(fs::exists(a / "infer" / name)) << name;
    std::snprintf(name, sizeof name, "semantic_%03d.pgm", k);
    EXPECT_TRUE(fs::exists(a / "infer" / name)) << name;
  }
  EXPECT_FALSE(fs::exists(a / "infer" / "frame_003.ppm"));
  EXPECT_TRUE(fs::exists(a / "render" / "frame_001.ppm"));
  EXPECT_FALSE(fs::exists(a / "render" / "frame_002.ppm"));
  EXPECT_EQ(load_ppm(a / "infer" / "frame_000.ppm").width, 8);
  EXPECT_EQ(load_mask_pgm(a / "infer" / "mask.pgm", 6).width(), 16);
  EXPECT_TRUE(fs::exists(a / "tsne.csv"));
  EXPECT_TRUE(fs::exists(a / "tsne.ppm"));
  for (const char* f : {"identity.pgm", "dilate.pgm", "erode.pgm", "random.pgm"})
    EXPECT_TRUE(fs::exists(a / "aug" / f)) << f;

  const auto sa = snapshot(a), sb = snapshot(b);
  ASSERT_EQ(sa.size(), sb.size());
  for (const auto& [name, bytes] : sa) {
    const auto it = sb.find(name);
    ASSERT_NE(it, sb.end()) << name;
    EXPECT_TRUE(bytes == it->second) << name;
  }
}

TEST(Cli, SelftestPasses) {
  const RunResult r = run("selftest");
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(r.output.find("FAIL"), std::string::npos) << r.output;
}
