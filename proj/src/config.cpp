#include "s3d/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "s3d/error.hpp"
#include "s3d/rng.hpp"

namespace s3d {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

// Reads keys of one flat section, rejecting anything not consumed.
class Section {
 public:
  Section(const json& root, const std::string& name, const std::string& origin)
      : name_(name), origin_(origin) {
    if (!root.contains(name)) return;
    obj_ = root.at(name);
    if (!obj_.is_object()) fail("section must be an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!obj_.contains(key)) return;
    try {
      out = obj_.at(key).get<T>();
    } catch (const json::exception&) {
      fail("key '" + key + "' has the wrong type");
    }
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) fail("unknown key '" + it.key() + "'");
    }
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const {
    throw ConfigError(origin_ + ": [" + name_ + "] " + msg);
  }
  std::string name_;
  std::string origin_;
  json obj_ = json::object();
  std::set<std::string> seen_;
};

}  // namespace

void RunConfig::validate() const {
  data.validate();
  unet.validate();
  teacher.model.validate();
  if (teacher.model.mask_size != unet.input_size || teacher.model.num_classes != unet.num_classes ||
      teacher.model.style_rows != unet.style_rows || teacher.model.style_dim != unet.style_dim) {
    throw ConfigError("teacher shape must follow the U-Net (mask size, classes, L, D)");
  }
  if (static_cast<int>(data.classes.size()) != unet.num_classes) {
    throw ConfigError("data classes and unet.num_classes disagree");
  }
  if (data.resolution != unet.input_size) {
    throw ConfigError("data.resolution must equal unet.input_size");
  }
  if (teacher.pretrain_steps < 0 || teacher.pretrain_samples < 1) {
    throw ConfigError("teacher pretraining schedule must be nonnegative");
  }
  train.validate();
  train.augment_policy.validate();
  view.render.validate();
  if (view.image_size < 1 || view.orbit_frames < 1) throw ConfigError("render sizes must be positive");
  if (!(view.radius > 0.0)) throw ConfigError("render.radius must be positive");
  tsne.validate();
}

std::uint64_t RunConfig::unet_seed() const { return rng::derive(seed, {1}); }
std::uint64_t RunConfig::teacher_seed() const { return rng::derive(seed, {2}); }
std::uint64_t RunConfig::train_seed() const { return rng::derive(seed, {3}); }
std::uint64_t RunConfig::tsne_seed() const { return rng::derive(seed, {4}); }

RunConfig default_run_config() {
  RunConfig c;
  c.data.count = 320;
  return c;
}

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  if (!root.is_object()) throw ConfigError(origin + ": top level must be an object");
  static const std::set<std::string> known = {"seed", "data", "unet", "teacher", "loss",
                                              "train", "augment", "render", "tsne"};
  for (auto it = root.begin(); it != root.end(); ++it) {
    if (!known.count(it.key())) throw ConfigError(origin + ": unknown section '" + it.key() + "'");
  }
  RunConfig c = default_run_config();
  if (root.contains("seed")) {
    if (!root["seed"].is_number_unsigned()) throw ConfigError(origin + ": seed must be a nonnegative integer");
    c.seed = root["seed"].get<std::uint64_t>();
  }

  Section data(root, "data", origin);
  data.get("count", c.data.count);
  data.get("train", c.data.splits.train);
  data.get("val", c.data.splits.val);
  data.get("test", c.data.splits.test);
  data.get("resolution", c.data.resolution);
  data.get("classes", c.data.classes);
  data.get("allow_empty", c.data.allow_empty);
  data.finish();
  c.data.seed = c.seed;

  Section unet(root, "unet", origin);
  unet.get("input_size", c.unet.input_size);
  unet.get("depth", c.unet.depth);
  unet.get("base_channels", c.unet.base_channels);
  unet.get("num_classes", c.unet.num_classes);
  unet.get("style_rows", c.unet.style_rows);
  unet.get("style_dim", c.unet.style_dim);
  unet.finish();

  Section teacher(root, "teacher", origin);
  Mask23DConfig& m = c.teacher.model;
  teacher.get("latent_dim", m.latent_dim);
  teacher.get("plane_res", m.plane_res);
  teacher.get("plane_channels", m.plane_channels);
  teacher.get("hidden", m.hidden);
  teacher.get("feature_dim", m.feature_dim);
  teacher.get("encoder_channels", m.encoder_channels);
  teacher.get("pretrain_steps", c.teacher.pretrain_steps);
  teacher.get("pretrain_samples", c.teacher.pretrain_samples);
  teacher.get("pretrain_batch", c.teacher.pretrain.batch_size);
  teacher.get("pretrain_lr", c.teacher.pretrain.learning_rate);
  teacher.get("pretrain_render_size", c.teacher.pretrain.render_size);
  teacher.finish();
  m.mask_size = c.unet.input_size;
  m.num_classes = c.unet.num_classes;
  m.style_rows = c.unet.style_rows;
  m.style_dim = c.unet.style_dim;

  Section loss(root, "loss", origin);
  loss.get("epsilon", c.train.loss.epsilon);
  loss.get("lambda_sv", c.train.loss.lambda_sv);
  loss.get("lambda_ce", c.train.loss.lambda_ce);
  loss.get("lambda_dice", c.train.loss.lambda_dice);
  loss.finish();

  Section train(root, "train", origin);
  train.get("steps", c.train.steps);
  train.get("batch_size", c.train.batch_size);
  train.get("learning_rate", c.train.adam.learning_rate);
  train.get("beta1", c.train.adam.beta1);
  train.get("beta2", c.train.adam.beta2);
  train.get("stabilizer", c.train.adam.stabilizer);
  train.get("checkpoint_interval", c.train.checkpoint_interval);
  train.get("augment", c.train.augment);
  train.finish();

  Section aug(root, "augment", origin);
  AugmentPolicy& a = c.train.augment_policy;
  aug.get("p_identity", a.p_identity);
  aug.get("p_dilate", a.p_dilate);
  aug.get("p_erode", a.p_erode);
  aug.get("dilate_kernel", a.dilate_kernel);
  aug.get("erode_kernel", a.erode_kernel);
  aug.get("binarize_threshold", a.binarize_threshold);
  aug.finish();

  Section render(root, "render", origin);
  render.get("samples_per_ray", c.view.render.samples_per_ray);
  render.get("near", c.view.render.near);
  render.get("far", c.view.render.far);
  render.get("background", c.view.render.background);
  render.get("image_size", c.view.image_size);
  render.get("orbit_frames", c.view.orbit_frames);
  render.get("orbit_range_deg", c.view.orbit_range_deg);
  render.get("elevation_deg", c.view.elevation_deg);
  render.get("radius", c.view.radius);
  render.get("fov_deg", c.view.fov_deg);
  render.finish();
  c.teacher.pretrain.render = c.view.render;

  Section tsne(root, "tsne", origin);
  tsne.get("perplexity", c.tsne.perplexity);
  tsne.get("iterations", c.tsne.iterations);
  tsne.get("learning_rate", c.tsne.learning_rate);
  tsne.get("momentum_early", c.tsne.momentum_early);
  tsne.get("momentum_late", c.tsne.momentum_late);
  tsne.get("momentum_switch", c.tsne.momentum_switch);
  tsne.get("exaggeration", c.tsne.exaggeration);
  tsne.get("exaggeration_iters", c.tsne.exaggeration_iters);
  tsne.finish();

  c.train.seed = c.train_seed();
  c.tsne.seed = c.tsne_seed();
  c.teacher.pretrain.seed = c.teacher_seed();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.string());
}

std::string dump_run_config(const RunConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  j["data"] = {{"count", c.data.count}, {"train", c.data.splits.train},
               {"val", c.data.splits.val}, {"test", c.data.splits.test},
               {"resolution", c.data.resolution}, {"classes", c.data.classes},
               {"allow_empty", c.data.allow_empty}};
  j["unet"] = {{"input_size", c.unet.input_size}, {"depth", c.unet.depth},
               {"base_channels", c.unet.base_channels}, {"num_classes", c.unet.num_classes},
               {"style_rows", c.unet.style_rows}, {"style_dim", c.unet.style_dim}};
  const Mask23DConfig& m = c.teacher.model;
  j["teacher"] = {{"latent_dim", m.latent_dim}, {"plane_res", m.plane_res},
                  {"plane_channels", m.plane_channels}, {"hidden", m.hidden},
                  {"feature_dim", m.feature_dim}, {"encoder_channels", m.encoder_channels},
                  {"pretrain_steps", c.teacher.pretrain_steps},
                  {"pretrain_samples", c.teacher.pretrain_samples},
                  {"pretrain_batch", c.teacher.pretrain.batch_size},
                  {"pretrain_lr", c.teacher.pretrain.learning_rate},
                  {"pretrain_render_size", c.teacher.pretrain.render_size}};
  j["loss"] = {{"epsilon", c.train.loss.epsilon}, {"lambda_sv", c.train.loss.lambda_sv},
               {"lambda_ce", c.train.loss.lambda_ce}, {"lambda_dice", c.train.loss.lambda_dice}};
  j["train"] = {{"steps", c.train.steps}, {"batch_size", c.train.batch_size},
                {"learning_rate", c.train.adam.learning_rate}, {"beta1", c.train.adam.beta1},
                {"beta2", c.train.adam.beta2}, {"stabilizer", c.train.adam.stabilizer},
                {"checkpoint_interval", c.train.checkpoint_interval},
                {"augment", c.train.augment}};
  const AugmentPolicy& a = c.train.augment_policy;
  j["augment"] = {{"p_identity", a.p_identity}, {"p_dilate", a.p_dilate},
                  {"p_erode", a.p_erode}, {"dilate_kernel", a.dilate_kernel},
                  {"erode_kernel", a.erode_kernel}, {"binarize_threshold", a.binarize_threshold}};
  j["render"] = {{"samples_per_ray", c.view.render.samples_per_ray},
                 {"near", c.view.render.near}, {"far", c.view.render.far},
                 {"background", c.view.render.background}, {"image_size", c.view.image_size},
                 {"orbit_frames", c.view.orbit_frames},
                 {"orbit_range_deg", c.view.orbit_range_deg},
                 {"elevation_deg", c.view.elevation_deg}, {"radius", c.view.radius},
                 {"fov_deg", c.view.fov_deg}};
  j["tsne"] = {{"perplexity", c.tsne.perplexity}, {"iterations", c.tsne.iterations},
               {"learning_rate", c.tsne.learning_rate},
               {"momentum_early", c.tsne.momentum_early},
               {"momentum_late", c.tsne.momentum_late},
               {"momentum_switch", c.tsne.momentum_switch},
               {"exaggeration", c.tsne.exaggeration},
               {"exaggeration_iters", c.tsne.exaggeration_iters}};
  return j.dump(2) + "\n";
}

}  // namespace s3d
