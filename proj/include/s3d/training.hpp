#pragma once

// Sketch-to-mask optimization against a frozen teacher, gradient checks and
// the training loop with checkpointing.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "s3d/augment.hpp"
#include "s3d/datagen.hpp"
#include "s3d/losses.hpp"
#include "s3d/mask23d.hpp"
#include "s3d/optim.hpp"
#include "s3d/unet.hpp"

namespace s3d {

struct TrainConfig {
  int steps = 2000;
  int batch_size = 8;
  AdamConfig adam;
  LossConfig loss;
  std::uint64_t seed = 0;
  int checkpoint_interval = 0;  // 0: final checkpoint only
  bool augment = false;
  AugmentPolicy augment_policy;

  void validate() const;
};

struct TrainBatch {
  std::vector<Sketch> sketches;
  std::vector<SegMask> masks;
  // Optional cached style targets; computed from the teacher when empty.
  std::vector<StyleVector> targets;
};

struct GradResult {
  LossReport report;  // batch mean of per-sample losses
  ParamSet grads;
};

// Exact gradient of the batch-mean L_total. Throws NumericError naming the
// term when a loss is non-finite, StateError when the teacher is not frozen.
GradResult grad_total_loss(const UNetParams& params, const Mask23DParams& teacher,
                           const TrainBatch& batch, const LossConfig& loss);

// Loss only, same reduction as grad_total_loss.
LossReport evaluate_loss(const UNetParams& params, const Mask23DParams& teacher,
                         const TrainBatch& batch, const LossConfig& loss);

LossReport train_step(UNetParams& params, AdamState& state, const Mask23DParams& teacher,
                      const TrainBatch& batch, const TrainConfig& cfg);

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: no files written
  std::string teacher_ref = "../teacher";
  // Called after each step with (step, report).
  std::function<void(int, const LossReport&)> on_step;
};

struct TrainResult {
  UNetParams params;
  std::vector<LossReport> log;  // one per step
  std::vector<int> checkpoint_steps;
};

// Batches follow a seeded per-epoch shuffle. Checkpoints land in
// out_dir/step_NNNNNN at every interval and out_dir/final at the end, and the
// per-step log goes to out_dir/train_log.csv.
TrainResult train_loop(const std::vector<DatasetSample>& train_set, const TrainConfig& cfg,
                       const UNetParams& init, const Mask23DParams& teacher,
                       const TrainOptions& options = {});

// Epoch permutation used by train_loop.
std::vector<int> epoch_order(std::uint64_t seed, int epoch, int count);

struct FdEntry {
  std::string name;
  double max_rel_error = 0.0;
  bool passed = false;
  // Entries whose step had to shrink (or go one-sided) to keep every
  // activation on the same side of its kink.
  int kink_adjusted = 0;
};

struct FdReport {
  std::vector<FdEntry> entries;
  bool passed = false;
  double threshold = 1e-4;
};

struct FdOptions {
  double step = 1e-5;
  double threshold = 1e-4;
  // Test fixture: scale the analytic CE gradient to make the check fail.
  double corrupt_ce_scale = 1.0;
};

// Central differences over every entry of every tensor of a UNet built from
// `config`, on one random sketch/mask pair and a matching tiny teacher.
// Relative error is |analytic - numeric| over the tensor's largest gradient
// magnitude. A probe that flips a leaky-ReLU sign or a max-pool choice is
// retried with a 10x smaller step, so differences never straddle a kink.
FdReport finite_diff_check(const UNetConfig& config, std::uint64_t seed,
                           const FdOptions& options = {});

// 16x16, depth 2, base 4, 3 classes, L x D = 3 x 8.
UNetConfig tiny_unet_config();

}  // namespace s3d
