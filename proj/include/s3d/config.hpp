#pragma once

// JSON run configuration shared by the CLI commands. Every section is a flat
// object; unknown keys are rejected and each module config is re-validated.

#include <cstdint>
#include <filesystem>
#include <string>

#include "s3d/augment.hpp"
#include "s3d/datagen.hpp"
#include "s3d/embedview.hpp"
#include "s3d/mask23d.hpp"
#include "s3d/training.hpp"
#include "s3d/unet.hpp"

namespace s3d {

struct TeacherSettings {
  Mask23DConfig model;  // mask_size, classes and style shape follow the U-Net
  int pretrain_steps = 0;
  PretrainOptions pretrain;
  int pretrain_samples = 32;
};

struct ViewSettings {
  RenderConfig render;
  int image_size = 64;
  int orbit_frames = 8;
  double orbit_range_deg = 45.0;
  double elevation_deg = 0.0;
  double radius = 3.0;
  double fov_deg = 40.0;
};

struct RunConfig {
  std::uint64_t seed = 0;
  DatasetManifest data;
  UNetConfig unet;
  TeacherSettings teacher;
  TrainConfig train;  // loss and augment sections land in here
  ViewSettings view;
  TsneConfig tsne;

  void validate() const;

  // Seeds for each consumer, derived from the global seed.
  std::uint64_t unet_seed() const;
  std::uint64_t teacher_seed() const;
  std::uint64_t train_seed() const;
  std::uint64_t tsne_seed() const;
};

RunConfig default_run_config();
// Missing file or bad contents: ConfigError naming the path.
RunConfig load_run_config(const std::filesystem::path& path);
RunConfig parse_run_config(const std::string& json_text, const std::string& origin = "config");
std::string dump_run_config(const RunConfig& cfg);

}  // namespace s3d
