#include "s3d/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "s3d/error.hpp"

namespace s3d {

namespace {

using nlohmann::ordered_json;

std::string tensor_file(const std::string& name) { return name + ".s3dt"; }

void write_json(const ordered_json& j, const std::filesystem::path& path) {
  const std::string text = j.dump(2) + "\n";
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

nlohmann::json read_json(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

ordered_json tensor_list(const ParamSet& p) {
  ordered_json list = ordered_json::array();
  for (std::size_t i = 0; i < p.size(); ++i) {
    list.push_back({{"name", p.name(i)}, {"shape", p[i].shape()}});
  }
  return list;
}

void save_tensors(const ParamSet& p, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < p.size(); ++i) save_tensor(p[i], dir / tensor_file(p.name(i)));
}

// Loads tensors listed in the manifest and checks them against `expected`.
ParamSet load_tensors(const nlohmann::json& list, const ParamSet& expected,
                      const std::filesystem::path& dir) {
  if (!list.is_array() || list.size() != expected.size()) {
    throw ConfigError(dir.string() + ": tensor list does not match the configured model");
  }
  ParamSet out;
  for (std::size_t i = 0; i < list.size(); ++i) {
    const std::string name = list[i].at("name").get<std::string>();
    if (name != expected.name(i)) {
      throw ConfigError(dir.string() + ": expected tensor " + expected.name(i) + ", found " + name);
    }
    Tensor t = load_tensor(dir / tensor_file(name));
    if (t.shape() != expected[i].shape()) {
      throw ConfigError(dir.string() + ": tensor " + name + " has the wrong shape");
    }
    out.add(name, std::move(t));
  }
  return out;
}

ordered_json unet_config_json(const UNetConfig& c) {
  return {{"input_size", c.input_size}, {"depth", c.depth},
          {"base_channels", c.base_channels}, {"num_classes", c.num_classes},
          {"style_rows", c.style_rows}, {"style_dim", c.style_dim}};
}

ordered_json teacher_config_json(const Mask23DConfig& c) {
  return {{"mask_size", c.mask_size},       {"num_classes", c.num_classes},
          {"latent_dim", c.latent_dim},     {"style_rows", c.style_rows},
          {"style_dim", c.style_dim},       {"plane_res", c.plane_res},
          {"plane_channels", c.plane_channels}, {"hidden", c.hidden},
          {"feature_dim", c.feature_dim},   {"encoder_channels", c.encoder_channels}};
}

}  // namespace

void save_unet_checkpoint(const UNetParams& params, int step, const std::string& teacher_ref,
                          const std::filesystem::path& dir) {
  save_tensors(params.tensors, dir);
  ordered_json j;
  j["kind"] = "unet";
  j["step"] = step;
  j["config"] = unet_config_json(params.config);
  j["teacher"] = teacher_ref;
  j["tensors"] = tensor_list(params.tensors);
  write_json(j, dir / "manifest.json");
}

UNetCheckpoint load_unet_checkpoint(const std::filesystem::path& dir) {
  const auto j = read_json(dir / "manifest.json");
  try {
    if (j.at("kind") != "unet") throw ConfigError(dir.string() + ": not a U-Net checkpoint");
    const auto& c = j.at("config");
    UNetConfig cfg;
    cfg.input_size = c.at("input_size").get<int>();
    cfg.depth = c.at("depth").get<int>();
    cfg.base_channels = c.at("base_channels").get<int>();
    cfg.num_classes = c.at("num_classes").get<int>();
    cfg.style_rows = c.at("style_rows").get<int>();
    cfg.style_dim = c.at("style_dim").get<int>();
    cfg.validate();
    const UNetParams shape = init_params(cfg, 0);
    UNetCheckpoint ck;
    ck.params = {cfg, load_tensors(j.at("tensors"), shape.tensors, dir)};
    ck.step = j.at("step").get<int>();
    ck.teacher_ref = j.at("teacher").get<std::string>();
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(dir.string() + "/manifest.json: " + e.what());
  }
}

void save_teacher(const Mask23DParams& params, const TeacherInfo& info,
                  const std::filesystem::path& dir) {
  save_tensors(params.tensors, dir);
  ordered_json j;
  j["kind"] = "teacher";
  j["seed"] = info.seed;
  j["pretrain_steps"] = info.pretrain_steps;
  j["config"] = teacher_config_json(params.config);
  j["tensors"] = tensor_list(params.tensors);
  write_json(j, dir / "manifest.json");
}

Mask23DParams load_teacher(const std::filesystem::path& dir, TeacherInfo* info) {
  const auto j = read_json(dir / "manifest.json");
  try {
    if (j.at("kind") != "teacher") throw ConfigError(dir.string() + ": not a teacher checkpoint");
    const auto& c = j.at("config");
    Mask23DConfig cfg;
    cfg.mask_size = c.at("mask_size").get<int>();
    cfg.num_classes = c.at("num_classes").get<int>();
    cfg.latent_dim = c.at("latent_dim").get<int>();
    cfg.style_rows = c.at("style_rows").get<int>();
    cfg.style_dim = c.at("style_dim").get<int>();
    cfg.plane_res = c.at("plane_res").get<int>();
    cfg.plane_channels = c.at("plane_channels").get<int>();
    cfg.hidden = c.at("hidden").get<int>();
    cfg.feature_dim = c.at("feature_dim").get<int>();
    cfg.encoder_channels = c.at("encoder_channels").get<std::vector<int>>();
    cfg.validate();
    const Mask23DParams shape = init_teacher(cfg, 0);
    Mask23DParams out{cfg, load_tensors(j.at("tensors"), shape.tensors, dir)};
    out.tensors.freeze();
    if (info) {
      info->config = cfg;
      info->seed = j.at("seed").get<std::uint64_t>();
      info->pretrain_steps = j.at("pretrain_steps").get<int>();
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(dir.string() + "/manifest.json: " + e.what());
  }
}

std::filesystem::path teacher_path(const std::filesystem::path& checkpoint_dir,
                                   const UNetCheckpoint& ckpt) {
  const std::filesystem::path ref(ckpt.teacher_ref);
  if (ref.empty()) throw ConfigError(checkpoint_dir.string() + ": checkpoint names no teacher");
  return ref.is_absolute() ? ref : (checkpoint_dir / ref).lexically_normal();
}

}  // namespace s3d
