#pragma once

// On-disk parameter sets: one S3DT file per tensor plus manifest.json.
// Tensors are stored as f32, so a reload is exact to single precision.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "s3d/mask23d.hpp"
#include "s3d/unet.hpp"

namespace s3d {

// Records how a teacher was produced, so a checkpoint can name it.
struct TeacherInfo {
  Mask23DConfig config;
  std::uint64_t seed = 0;
  int pretrain_steps = 0;
};

struct UNetCheckpoint {
  UNetParams params;
  int step = 0;
  // Teacher directory as written in the manifest, relative to the checkpoint.
  std::string teacher_ref;
};

void save_unet_checkpoint(const UNetParams& params, int step, const std::string& teacher_ref,
                          const std::filesystem::path& dir);
UNetCheckpoint load_unet_checkpoint(const std::filesystem::path& dir);

void save_teacher(const Mask23DParams& params, const TeacherInfo& info,
                  const std::filesystem::path& dir);
// The loaded teacher is frozen.
Mask23DParams load_teacher(const std::filesystem::path& dir, TeacherInfo* info = nullptr);

// Teacher named by a UNet checkpoint.
std::filesystem::path teacher_path(const std::filesystem::path& checkpoint_dir,
                                   const UNetCheckpoint& ckpt);

}  // namespace s3d
