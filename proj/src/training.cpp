#include "s3d/training.hpp"

#include <algorithm>
#include <optional>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "s3d/checkpoint.hpp"
#include "s3d/error.hpp"
#include "s3d/rng.hpp"

namespace s3d {

void TrainConfig::validate() const {
  if (steps < 1) throw ConfigError("train.steps must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (checkpoint_interval < 0) throw ConfigError("train.checkpoint_interval must be >= 0");
  adam.validate();
  loss.validate();
  if (augment) augment_policy.validate();
}

namespace {

void check_batch(const TrainBatch& batch) {
  if (batch.sketches.empty() || batch.sketches.size() != batch.masks.size()) {
    throw ConfigError("batch needs matching, non-empty sketch and mask lists");
  }
  if (!batch.targets.empty() && batch.targets.size() != batch.sketches.size()) {
    throw ConfigError("batch style targets do not match the batch size");
  }
}

void check_finite(double v, const char* term, std::size_t index) {
  if (!std::isfinite(v)) {
    throw NumericError(std::string("non-finite ") + term + " for batch sample " + std::to_string(index));
  }
}

struct SampleLoss {
  double l_sv = 0.0, l_ce = 0.0, l_dice = 0.0;
};

// Shared forward (and optional backward) for one sample.
SampleLoss sample_loss(const UNetParams& params, const Mask23DParams& teacher,
                       const TrainBatch& batch, std::size_t i, const LossConfig& loss,
                       ParamSet* grads, double grad_scale, double ce_scale) {
  const StyleVector target =
      batch.targets.empty() ? style_target(teacher, batch.masks[i]) : batch.targets[i];
  UNetTape tape;
  const UNetOutput out = grads ? forward(params, batch.sketches[i], tape)
                               : forward(params, batch.sketches[i]);
  SampleLoss s;
  s.l_sv = style_vector_loss(target, out.embedding);
  check_finite(s.l_sv, "L_SV", i);
  if (!out.logits.all_finite()) {
    throw NumericError("non-finite logits feeding L_CE and L_Dice for batch sample " +
                       std::to_string(i));
  }
  const ProbMap probs = ProbMap::softmax(out.logits);
  const OneHotMask y = one_hot(batch.masks[i]);
  s.l_ce = cross_entropy_loss(y, probs);
  s.l_dice = dice_loss(y, probs, loss.epsilon);
  check_finite(s.l_ce, "L_CE", i);
  check_finite(s.l_dice, "L_Dice", i);
  if (!grads) return s;

  std::vector<double> dprobs = cross_entropy_loss_grad(y, probs);
  const std::vector<double> ddice = dice_loss_grad(y, probs, loss.epsilon);
  const double wce = grad_scale * loss.lambda_ce * ce_scale;
  const double wdice = grad_scale * loss.lambda_dice;
  for (std::size_t k = 0; k < dprobs.size(); ++k) dprobs[k] = wce * dprobs[k] + wdice * ddice[k];
  const std::vector<double> dz = softmax_backward(probs, dprobs);
  Tensor dlogits(out.logits.shape(), dz);
  std::vector<double> demb = style_vector_loss_grad(target, out.embedding);
  for (double& v : demb) v *= grad_scale * loss.lambda_sv;
  backward(params, tape, dlogits, demb, *grads);
  return s;
}

LossReport reduce(const std::vector<SampleLoss>& losses, const LossConfig& cfg) {
  double sv = 0.0, ce = 0.0, dice = 0.0;
  for (const SampleLoss& s : losses) {
    sv += s.l_sv;
    ce += s.l_ce;
    dice += s.l_dice;
  }
  const double n = static_cast<double>(losses.size());
  return total_loss(sv / n, ce / n, dice / n, cfg);
}

GradResult grad_impl(const UNetParams& params, const Mask23DParams& teacher,
                     const TrainBatch& batch, const LossConfig& loss, double ce_scale) {
  loss.validate();
  check_batch(batch);
  if (!teacher.frozen()) throw StateError("teacher parameters must be frozen during training");
  GradResult r{{}, params.tensors.zeros_like()};
  const double scale = 1.0 / static_cast<double>(batch.sketches.size());
  std::vector<SampleLoss> losses;
  for (std::size_t i = 0; i < batch.sketches.size(); ++i) {
    losses.push_back(sample_loss(params, teacher, batch, i, loss, &r.grads, scale, ce_scale));
  }
  r.report = reduce(losses, loss);
  return r;
}

}  // namespace

GradResult grad_total_loss(const UNetParams& params, const Mask23DParams& teacher,
                           const TrainBatch& batch, const LossConfig& loss) {
  return grad_impl(params, teacher, batch, loss, 1.0);
}

LossReport evaluate_loss(const UNetParams& params, const Mask23DParams& teacher,
                         const TrainBatch& batch, const LossConfig& loss) {
  loss.validate();
  check_batch(batch);
  std::vector<SampleLoss> losses;
  for (std::size_t i = 0; i < batch.sketches.size(); ++i) {
    losses.push_back(sample_loss(params, teacher, batch, i, loss, nullptr, 1.0, 1.0));
  }
  return reduce(losses, loss);
}

LossReport train_step(UNetParams& params, AdamState& state, const Mask23DParams& teacher,
                      const TrainBatch& batch, const TrainConfig& cfg) {
  GradResult g = grad_total_loss(params, teacher, batch, cfg.loss);
  if (!g.grads.all_finite()) throw NumericError("non-finite gradient");
  adam_step(params.tensors, state, g.grads, cfg.adam);
  return g.report;
}

std::vector<int> epoch_order(std::uint64_t seed, int epoch, int count) {
  std::vector<int> order(count);
  for (int i = 0; i < count; ++i) order[i] = i;
  SplitMix64 g(rng::derive(seed, {0x5417u, static_cast<std::uint64_t>(epoch)}));
  for (int i = count - 1; i > 0; --i) {
    const int j = static_cast<int>(g.below(static_cast<std::uint64_t>(i) + 1));
    std::swap(order[i], order[j]);
  }
  return order;
}

namespace {

std::string step_dir_name(int step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%06d", step);
  return buf;
}

std::string log_row(int step, const LossReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g\n", step, r.l_sv, r.l_ce, r.l_dice,
                r.l_total);
  return buf;
}

}  // namespace

TrainResult train_loop(const std::vector<DatasetSample>& train_set, const TrainConfig& cfg,
                       const UNetParams& init, const Mask23DParams& teacher,
                       const TrainOptions& options) {
  cfg.validate();
  if (train_set.empty()) throw ConfigError("training set is empty");
  if (!teacher.frozen()) throw StateError("teacher parameters must be frozen during training");
  const int n = static_cast<int>(train_set.size());

  std::vector<StyleVector> targets;
  targets.reserve(n);
  for (const DatasetSample& s : train_set) targets.push_back(style_target(teacher, s.mask));

  TrainResult result{init, {}, {}};
  AdamState state = AdamState::for_params(result.params.tensors);
  std::string log = "step,l_sv,l_ce,l_dice,l_total\n";
  const bool write = !options.out_dir.empty();
  if (write) std::filesystem::create_directories(options.out_dir);
  auto flush_log = [&] {
    if (write) {
      write_file(options.out_dir / "train_log.csv",
                 std::span(reinterpret_cast<const std::uint8_t*>(log.data()), log.size()));
    }
  };

  int epoch = 0;
  std::vector<int> order = epoch_order(cfg.seed, epoch, n);
  int cursor = 0;
  for (int step = 1; step <= cfg.steps; ++step) {
    TrainBatch batch;
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor == n) {
        order = epoch_order(cfg.seed, ++epoch, n);
        cursor = 0;
      }
      const int idx = order[cursor++];
      const DatasetSample& s = train_set[idx];
      batch.sketches.push_back(
          cfg.augment ? random_augment(s.sketch, cfg.augment_policy,
                                       rng::derive(cfg.seed, {0xA06u, static_cast<std::uint64_t>(step),
                                                              static_cast<std::uint64_t>(b)}))
                      : s.sketch);
      batch.masks.push_back(s.mask);
      batch.targets.push_back(targets[idx]);
    }
    LossReport r;
    try {
      r = train_step(result.params, state, teacher, batch, cfg);
    } catch (const NumericError& e) {
      throw NumericError("step " + std::to_string(step) + ": " + e.what());
    }
    result.log.push_back(r);
    log += log_row(step, r);
    if (options.on_step) options.on_step(step, r);
    if (cfg.checkpoint_interval > 0 && step % cfg.checkpoint_interval == 0 && step != cfg.steps) {
      result.checkpoint_steps.push_back(step);
      if (write) {
        save_unet_checkpoint(result.params, step, options.teacher_ref,
                             options.out_dir / step_dir_name(step));
        flush_log();
      }
    }
  }
  result.checkpoint_steps.push_back(cfg.steps);
  if (write) {
    save_unet_checkpoint(result.params, cfg.steps, options.teacher_ref, options.out_dir / "final");
    flush_log();
  }
  return result;
}

namespace {

// Loss plus the signs of every leaky-ReLU input and every max-pool choice.
std::pair<double, std::vector<std::uint8_t>> loss_and_kinks(const UNetParams& params,
                                                           const TrainBatch& batch,
                                                           const LossConfig& loss) {
  std::vector<std::uint8_t> pattern;
  auto signs = [&pattern](const std::vector<double>& v) {
    for (double x : v) pattern.push_back(x > 0.0);
  };
  std::vector<SampleLoss> losses;
  for (std::size_t i = 0; i < batch.sketches.size(); ++i) {
    UNetTape tape;
    const UNetOutput out = forward(params, batch.sketches[i], tape);
    const ProbMap probs = ProbMap::softmax(out.logits);
    const OneHotMask y = one_hot(batch.masks[i]);
    losses.push_back({style_vector_loss(batch.targets[i], out.embedding),
                      cross_entropy_loss(y, probs), dice_loss(y, probs, loss.epsilon)});
    for (const auto& l : tape.encoder) {
      signs(l.pre1.data);
      signs(l.pre2.data);
      for (std::uint32_t a : l.pool_argmax) {
        for (int b = 0; b < 4; ++b) pattern.push_back(static_cast<std::uint8_t>(a >> (8 * b)));
      }
    }
    signs(tape.middle.pre1.data);
    signs(tape.middle.pre2.data);
    signs(tape.unproj_pre);
    for (const auto& l : tape.decoder) {
      signs(l.pre1.data);
      signs(l.pre2.data);
    }
  }
  return {reduce(losses, loss).l_total, std::move(pattern)};
}

}  // namespace

UNetConfig tiny_unet_config() {
  UNetConfig c;
  c.input_size = 16;
  c.depth = 2;
  c.base_channels = 4;
  c.num_classes = 3;
  c.style_rows = 3;
  c.style_dim = 8;
  return c;
}

FdReport finite_diff_check(const UNetConfig& config, std::uint64_t seed, const FdOptions& options) {
  config.validate();
  UNetParams params = init_params(config, rng::derive(seed, {1}));
  Mask23DConfig tcfg;
  tcfg.mask_size = config.input_size;
  tcfg.num_classes = config.num_classes;
  tcfg.latent_dim = 4;
  tcfg.style_rows = config.style_rows;
  tcfg.style_dim = config.style_dim;
  tcfg.plane_res = 4;
  tcfg.plane_channels = 4;
  tcfg.hidden = 8;
  tcfg.feature_dim = 2;
  tcfg.encoder_channels = {4, 4};
  const Mask23DParams teacher = init_frozen(tcfg, rng::derive(seed, {2}));

  TrainBatch batch;
  SplitMix64 g(rng::derive(seed, {3}));
  const int side = config.input_size;
  const std::size_t pixels = static_cast<std::size_t>(side) * side;
  for (int b = 0; b < 2; ++b) {
    std::vector<double> sk(pixels);
    for (double& v : sk) v = g.uniform();
    std::vector<int> lab(pixels);
    for (int& v : lab) v = static_cast<int>(g.below(static_cast<std::uint64_t>(config.num_classes)));
    batch.sketches.emplace_back(side, side, std::move(sk));
    batch.masks.emplace_back(side, side, config.num_classes, std::move(lab));
    batch.targets.push_back(style_target(teacher, batch.masks.back()));
  }
  LossConfig loss;
  const GradResult analytic = grad_impl(params, teacher, batch, loss, options.corrupt_ce_scale);

  FdReport report;
  report.threshold = options.threshold;
  report.passed = true;
  const auto [centre, base_pattern] = loss_and_kinks(params, batch, loss);
  // Loss at x + delta, or nullopt when the perturbation moves any
  // activation across a kink relative to the unperturbed point.
  auto probe = [&](std::size_t t, std::size_t i, double delta) -> std::optional<double> {
    const double orig = params.tensors[t][i];
    params.tensors.mutable_at(t)[i] = orig + delta;
    auto [v, pattern] = loss_and_kinks(params, batch, loss);
    params.tensors.mutable_at(t)[i] = orig;
    if (pattern != base_pattern) return std::nullopt;
    return v;
  };
  for (std::size_t t = 0; t < params.tensors.size(); ++t) {
    const Tensor& ga = analytic.grads[t];
    std::vector<double> numeric(ga.size());
    FdEntry e;
    e.name = params.tensors.name(t);
    for (std::size_t i = 0; i < ga.size(); ++i) {
      double h = options.step;
      bool done = false;
      for (int shrink = 0; shrink < 5 && !done; ++shrink, h *= 0.1) {
        const auto up = probe(t, i, h);
        const auto down = probe(t, i, -h);
        if (up && down) {
          numeric[i] = (*up - *down) / (2.0 * h);
          done = true;
        }
        if (shrink > 0 && done) ++e.kink_adjusted;
      }
      if (!done) {
        // Sitting on a kink: report the one-sided slope that is smooth, if any.
        h = options.step * 1e-4;
        if (const auto up = probe(t, i, h)) {
          numeric[i] = (*up - centre) / h;
        } else if (const auto down = probe(t, i, -h)) {
          numeric[i] = (centre - *down) / h;
        } else {
          numeric[i] = ga[i];
        }
        ++e.kink_adjusted;
      }
    }
    double scale = 0.0, err = 0.0;
    for (std::size_t i = 0; i < ga.size(); ++i) {
      scale = std::max({scale, std::abs(ga[i]), std::abs(numeric[i])});
      err = std::max(err, std::abs(ga[i] - numeric[i]));
    }
    e.max_rel_error = scale > 0.0 ? err / scale : 0.0;
    e.passed = e.max_rel_error < options.threshold;
    report.passed = report.passed && e.passed;
    report.entries.push_back(e);
  }
  return report;
}

}  // namespace s3d
