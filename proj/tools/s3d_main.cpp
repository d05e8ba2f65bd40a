// s3d: command-line entry point. Exit codes: 0 success, 1 invalid input or
// usage, 2 runtime failure.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "s3d/augment.hpp"
#include "s3d/checkpoint.hpp"
#include "s3d/config.hpp"
#include "s3d/datagen.hpp"
#include "s3d/embedview.hpp"
#include "s3d/error.hpp"
#include "s3d/metrics.hpp"
#include "s3d/rng.hpp"
#include "s3d/selftest.hpp"
#include "s3d/training.hpp"

namespace fs = std::filesystem;
using namespace s3d;

namespace {

RunConfig config_from(const std::string& path) {
  return path.empty() ? default_run_config() : load_run_config(path);
}

std::string numbered(const char* stem, int k, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%03d.%s", stem, k, ext);
  return buf;
}

RgbImage to_rgb(const Tensor& color) {
  RgbImage img(static_cast<int>(color.dim(1)), static_cast<int>(color.dim(0)));
  img.data.assign(color.values().begin(), color.values().end());
  return img;
}

SegMask semantic_labels(const Tensor& semantic) {
  const int h = static_cast<int>(semantic.dim(0));
  const int w = static_cast<int>(semantic.dim(1));
  const int c = static_cast<int>(semantic.dim(2));
  std::vector<int> labels(static_cast<std::size_t>(h) * w);
  for (std::size_t px = 0; px < labels.size(); ++px) {
    int best = 0;
    for (int k = 1; k < c; ++k) {
      if (semantic[px * c + k] > semantic[px * c + best]) best = k;
    }
    labels[px] = best;
  }
  return SegMask(w, h, c, std::move(labels));
}

LatentCode latent_for(const Mask23DConfig& cfg, std::optional<std::uint64_t> seed) {
  if (seed) return sample_latent(cfg, *seed);
  return LatentCode{std::vector<double>(cfg.latent_dim, 0.0)};
}

// Frontal view plus `frames` azimuths spread evenly over +-range.
void render_views(const Mask23DParams& teacher, const StyleVector& w, const ViewSettings& view,
                  const fs::path& out) {
  fs::create_directories(out);
  const Camera front = orbit_camera(0.0, view.elevation_deg, view.radius, view.fov_deg, view.image_size);
  const RenderOutput f = render_image(teacher, w, front, view.render);
  save_ppm(to_rgb(f.color), out / "frontal.ppm");
  save_mask_pgm(semantic_labels(f.semantic), out / "frontal_semantic.pgm");
  for (int k = 0; k < view.orbit_frames; ++k) {
    const double az = view.orbit_frames == 1
                          ? 0.0
                          : -view.orbit_range_deg + 2.0 * view.orbit_range_deg * k / (view.orbit_frames - 1);
    const Camera cam = orbit_camera(az, view.elevation_deg, view.radius, view.fov_deg, view.image_size);
    const RenderOutput r = render_image(teacher, w, cam, view.render);
    save_ppm(to_rgb(r.color), out / numbered("frame", k, "ppm"));
    save_mask_pgm(semantic_labels(r.semantic), out / numbered("semantic", k, "pgm"));
  }
}

Mask23DParams build_teacher(const RunConfig& cfg, const std::vector<DatasetSample>& train) {
  Mask23DParams t = init_teacher(cfg.teacher.model, cfg.teacher_seed());
  if (cfg.teacher.pretrain_steps == 0) {
    t.tensors.freeze();
    return t;
  }
  std::vector<SegMask> masks;
  for (std::size_t i = 0; i < train.size() && static_cast<int>(i) < cfg.teacher.pretrain_samples; ++i) {
    masks.push_back(train[i].mask);
  }
  return pretrain_semantic(t, masks, cfg.teacher.pretrain_steps, cfg.teacher.pretrain);
}

void print_json(const nlohmann::ordered_json& j, const std::string& out) {
  const std::string text = j.dump(2) + "\n";
  if (out.empty()) {
    std::cout << text;
  } else {
    write_file(out, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  }
}

nlohmann::json optional_list(const std::vector<std::optional<double>>& v) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& x : v) a.push_back(x ? nlohmann::json(*x) : nlohmann::json(nullptr));
  return a;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"s3d: sketch-to-mask training, teacher rendering and evaluation"};
  app.require_subcommand(1);
  std::string config_path;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic face dataset");
  std::string gen_out;
  std::optional<int> gen_count;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--config", config_path, "Run config JSON");
  gen->add_option("--out", gen_out, "Dataset root")->required();
  gen->add_option("--count", gen_count, "Override data.count");
  gen->add_option("--seed", gen_seed, "Override the global seed");

  auto* train = app.add_subcommand("train", "Train the sketch-to-mask U-Net");
  std::string data_root, out_dir;
  train->add_option("--config", config_path, "Run config JSON");
  train->add_option("--data", data_root, "Dataset root")->required();
  train->add_option("--out", out_dir, "Output directory")->required();

  auto* eval = app.add_subcommand("eval", "Compute mIoU and mAP on a split");
  std::string ckpt_dir, split = "test", json_out;
  eval->add_option("--checkpoint", ckpt_dir, "U-Net checkpoint directory")->required();
  eval->add_option("--data", data_root, "Dataset root")->required();
  eval->add_option("--split", split, "train, val or test");
  eval->add_option("--out", json_out, "Write JSON here instead of stdout");

  auto* infer = app.add_subcommand("infer", "Sketch -> mask -> style vector -> rendered views");
  std::string sketch_path;
  std::optional<std::uint64_t> latent_seed;
  std::optional<int> frames;
  infer->add_option("--config", config_path, "Run config JSON (render section)");
  infer->add_option("--checkpoint", ckpt_dir, "U-Net checkpoint directory")->required();
  infer->add_option("--sketch", sketch_path, "Input sketch PGM")->required();
  infer->add_option("--out", out_dir, "Output directory")->required();
  infer->add_option("--latent-seed", latent_seed, "Sample z from this seed instead of z = 0");
  infer->add_option("--frames", frames, "Orbit frame count");

  auto* render = app.add_subcommand("render", "Render a mask through the teacher");
  std::string teacher_dir, mask_path;
  render->add_option("--config", config_path, "Run config JSON (render section)");
  render->add_option("--teacher", teacher_dir, "Teacher directory")->required();
  render->add_option("--mask", mask_path, "Label mask PGM")->required();
  render->add_option("--out", out_dir, "Output directory")->required();
  render->add_option("--latent-seed", latent_seed, "Sample z from this seed instead of z = 0");
  render->add_option("--frames", frames, "Orbit frame count");

  auto* tsne = app.add_subcommand("tsne", "t-SNE of bottleneck embeddings");
  std::string prefix;
  tsne->add_option("--config", config_path, "Run config JSON (tsne section)");
  tsne->add_option("--checkpoint", ckpt_dir, "U-Net checkpoint directory")->required();
  tsne->add_option("--data", data_root, "Dataset root")->required();
  tsne->add_option("--split", split, "train, val or test");
  tsne->add_option("--out", prefix, "Output prefix for .csv and .ppm")->required();

  auto* preview = app.add_subcommand("augment-preview", "Write each augmentation branch of a sketch");
  std::uint64_t aug_seed = 0;
  preview->add_option("--config", config_path, "Run config JSON (augment section)");
  preview->add_option("--sketch", sketch_path, "Input sketch PGM")->required();
  preview->add_option("--out", out_dir, "Output directory")->required();
  preview->add_option("--seed", aug_seed, "Seed for random.pgm");

  auto* self = app.add_subcommand("selftest", "Run gradient and closed-form checks");
  bool quick = false;
  self->add_flag("--quick", quick, "Skip the finite-difference sweep");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*gen) {
      RunConfig cfg = config_from(config_path);
      if (gen_seed) cfg.seed = *gen_seed;
      DatasetManifest m = cfg.data;
      m.seed = cfg.seed;
      if (gen_count) m.count = *gen_count;
      m.root = gen_out;
      generate_dataset(m);
      const auto n = allocate_splits(m.count, m.splits);
      std::cout << "wrote " << m.count << " samples (" << n[0] << " train, " << n[1] << " val, "
                << n[2] << " test) to " << gen_out << "\n";
    } else if (*train) {
      const RunConfig cfg = config_from(config_path);
      const auto samples = load_split(data_root, "train", cfg.unet.num_classes);
      const Mask23DParams teacher = build_teacher(cfg, samples);
      fs::create_directories(out_dir);
      save_teacher(teacher, {cfg.teacher.model, cfg.teacher_seed(), cfg.teacher.pretrain_steps},
                   fs::path(out_dir) / "teacher");
      const std::string cfg_text = dump_run_config(cfg);
      write_file(fs::path(out_dir) / "config.json",
                 std::span(reinterpret_cast<const std::uint8_t*>(cfg_text.data()), cfg_text.size()));
      TrainOptions opts;
      opts.out_dir = out_dir;
      opts.on_step = [&](int step, const LossReport& r) {
        if (step % 100 == 0 || step == cfg.train.steps) {
          std::printf("step %d  total %.5f  sv %.5f  ce %.5f  dice %.5f\n", step, r.l_total, r.l_sv,
                      r.l_ce, r.l_dice);
          std::fflush(stdout);
        }
      };
      train_loop(samples, cfg.train, init_params(cfg.unet, cfg.unet_seed()), teacher, opts);
      std::cout << "checkpoint: " << (fs::path(out_dir) / "final").string() << "\n";
    } else if (*eval) {
      const UNetCheckpoint ck = load_unet_checkpoint(ckpt_dir);
      const auto samples = load_split(data_root, split, ck.params.config.num_classes);
      ConfusionMatrix cm(ck.params.config.num_classes);
      ApAccumulator ap(ck.params.config.num_classes);
      for (const DatasetSample& s : samples) {
        const auto [mask, probs] = predict_mask(ck.params, s.sketch);
        cm += confusion(s.mask, mask);
        ap.add(one_hot(s.mask), probs);
      }
      nlohmann::ordered_json j;
      j["miou"] = miou(cm);
      j["map"] = ap.mean_ap();
      j["per_class_iou"] = optional_list(per_class_iou(cm));
      j["per_class_ap"] = optional_list(ap.per_class_ap());
      j["n_images"] = samples.size();
      print_json(j, json_out);
    } else if (*infer) {
      RunConfig cfg = config_from(config_path);
      if (frames) cfg.view.orbit_frames = *frames;
      cfg.view.render.validate();
      if (cfg.view.orbit_frames < 1) throw ConfigError("--frames must be >= 1");
      const UNetCheckpoint ck = load_unet_checkpoint(ckpt_dir);
      const Mask23DParams teacher = load_teacher(teacher_path(ckpt_dir, ck));
      const Sketch sketch = load_pgm(sketch_path);
      const auto [mask, probs] = predict_mask(ck.params, sketch);
      fs::create_directories(out_dir);
      save_mask_pgm(mask, fs::path(out_dir) / "mask.pgm");
      save_ppm(colorize(mask), fs::path(out_dir) / "mask.ppm");
      const StyleVector w = encode(teacher, mask, latent_for(teacher.config, latent_seed));
      render_views(teacher, w, cfg.view, out_dir);
      std::cout << "wrote mask and " << cfg.view.orbit_frames << " orbit frames to " << out_dir << "\n";
    } else if (*render) {
      RunConfig cfg = config_from(config_path);
      if (frames) cfg.view.orbit_frames = *frames;
      cfg.view.render.validate();
      if (cfg.view.orbit_frames < 1) throw ConfigError("--frames must be >= 1");
      const Mask23DParams teacher = load_teacher(teacher_dir);
      const SegMask mask = load_mask_pgm(mask_path, teacher.config.num_classes);
      const StyleVector w = encode(teacher, mask, latent_for(teacher.config, latent_seed));
      render_views(teacher, w, cfg.view, out_dir);
      std::cout << "wrote " << cfg.view.orbit_frames << " orbit frames to " << out_dir << "\n";
    } else if (*tsne) {
      const RunConfig cfg = config_from(config_path);
      const UNetCheckpoint ck = load_unet_checkpoint(ckpt_dir);
      const auto samples = load_split(data_root, split, ck.params.config.num_classes);
      const EmbeddingSet set = collect_embeddings(ck.params, samples);
      if (set.n < 2) throw ConfigError("t-SNE needs at least two samples in split " + split);
      const TsneResult r = tsne_embed(affinities(set.data, set.n, set.dim, cfg.tsne.perplexity), set.n, cfg.tsne);
      export_scatter(r.coords, set.labels, 3, prefix);
      std::printf("n %d  kl %.5f -> %.5f  silhouette %.4f\n", set.n, r.initial_kl, r.final_kl,
                  silhouette(r.coords, 2, set.labels));
    } else if (*preview) {
      const RunConfig cfg = config_from(config_path);
      const AugmentPolicy& policy = cfg.train.augment_policy;
      const Sketch s = load_pgm(sketch_path);
      const fs::path out(out_dir);
      fs::create_directories(out);
      save_pgm(apply_branch(s, policy, AugmentBranch::kIdentity), out / "identity.pgm");
      save_pgm(apply_branch(s, policy, AugmentBranch::kDilate), out / "dilate.pgm");
      save_pgm(apply_branch(s, policy, AugmentBranch::kErode), out / "erode.pgm");
      save_pgm(random_augment(s, policy, aug_seed), out / "random.pgm");
    } else if (*self) {
      bool ok = true;
      for (const SelfCheck& c : run_selftest(!quick)) {
        std::printf("%s  %s  [%s]\n", c.passed ? "PASS" : "FAIL", c.name.c_str(), c.detail.c_str());
        ok = ok && c.passed;
      }
      return ok ? 0 : 2;
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
