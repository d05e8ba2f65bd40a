#include "s3d/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"
#include "s3d/error.hpp"
#include "s3d/rng.hpp"

namespace s3d {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

// Local frame of `e`: rotate (x - cx, y - cy) by -rotation.
std::array<double, 2> to_local(const Ellipse& e, double x, double y) {
  const double dx = x - e.cx;
  const double dy = y - e.cy;
  const double c = std::cos(e.rotation);
  const double s = std::sin(e.rotation);
  return {c * dx + s * dy, -s * dx + c * dy};
}

std::array<double, 2> from_local(const Ellipse& e, double u, double v) {
  const double c = std::cos(e.rotation);
  const double s = std::sin(e.rotation);
  return {e.cx + c * u - s * v, e.cy + s * u + c * v};
}

}  // namespace

const std::vector<std::string>& face_class_names() {
  static const std::vector<std::string> names = {"background", "skin", "hair",
                                                 "eye", "mouth", "neck"};
  return names;
}

double Ellipse::rho(double x, double y) const {
  const auto [u, v] = to_local(*this, x, y);
  return std::hypot(u / rx, v / ry);
}

std::array<double, 2> Ellipse::boundary_point(double t) const {
  return from_local(*this, rx * std::cos(t), ry * std::sin(t));
}

bool features_inside_face(const FaceSpec& spec) {
  constexpr int kSweep = 720;
  auto inside = [&](const Ellipse& inner) {
    if (!(inner.rx > 0 && inner.ry > 0)) return false;
    for (int k = 0; k < kSweep; ++k) {
      const auto [x, y] = inner.boundary_point(2.0 * std::numbers::pi * k / kSweep);
      if (spec.face.rho(x, y) >= 1.0) return false;
    }
    return true;
  };
  return spec.face.rx > 0 && spec.face.ry > 0 && inside(spec.eyes[0]) &&
         inside(spec.eyes[1]) && inside(spec.mouth);
}

FaceSpec sample_spec(std::uint64_t seed) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    SplitMix64 g(rng::derive(seed, {attempt}));
    FaceSpec s;
    s.seed = seed;
    s.face.cx = g.uniform(0.46, 0.54);
    s.face.cy = g.uniform(0.44, 0.52);
    s.face.rx = g.uniform(0.25, 0.40);
    s.face.ry = g.uniform(0.25, 0.40);
    s.face.rotation = g.uniform(-12.0, 12.0) * kDeg;

    const double ex = g.uniform(0.28, 0.42) * s.face.rx;
    const double ey = -g.uniform(0.12, 0.30) * s.face.ry;
    const double erx = g.uniform(0.04, 0.07);
    const double ery = g.uniform(0.03, 0.05);
    for (int side = 0; side < 2; ++side) {
      const auto [x, y] = from_local(s.face, side == 0 ? -ex : ex, ey);
      s.eyes[side] = Ellipse{x, y, erx, ery, s.face.rotation};
    }

    const double my = g.uniform(0.38, 0.55) * s.face.ry;
    const auto [mx, mys] = from_local(s.face, 0.0, my);
    s.mouth = Ellipse{mx, mys, g.uniform(0.06, 0.10), g.uniform(0.04, 0.06),
                      s.face.rotation};

    s.hair_thickness = g.uniform(0.04, 0.10);
    s.hair_coverage_deg = g.uniform(60.0, 300.0);
    s.neck_half_width = g.uniform(0.40, 0.60) * s.face.rx;

    if (features_inside_face(s)) return s;
  }
}

SegMask rasterize_mask(const FaceSpec& spec, int width, int height) {
  if (width < 16 || height < 16) {
    throw ConfigError("rasterize_mask needs width, height >= 16");
  }
  const Ellipse& face = spec.face;
  const double k = spec.hair_thickness / std::sqrt(face.rx * face.ry);
  const double half_cov = 0.5 * spec.hair_coverage_deg * kDeg;
  std::vector<int> labels(static_cast<std::size_t>(width) * height, kBackground);
  for (int j = 0; j < height; ++j) {
    const double y = (j + 0.5) / height;
    for (int i = 0; i < width; ++i) {
      const double x = (i + 0.5) / width;
      int label = kBackground;
      if (std::abs(x - face.cx) <= spec.neck_half_width && y >= face.cy) {
        label = kNeck;
      }
      const double r = face.rho(x, y);
      if (r < 1.0) label = kSkin;
      if (half_cov > 0.0 && r >= 1.0 - 0.35 * k && r <= 1.0 + k) {
        const auto [u, v] = to_local(face, x, y);
        // Angle from the top of the head.
        const double phi = std::atan2(u, -v);
        if (std::abs(phi) <= half_cov) label = kHair;
      }
      if (spec.eyes[0].rho(x, y) < 1.0 || spec.eyes[1].rho(x, y) < 1.0) {
        label = kEye;
      }
      if (spec.mouth.rho(x, y) < 1.0) label = kMouth;
      labels[static_cast<std::size_t>(j) * width + i] = label;
    }
  }
  return SegMask(width, height, kFaceClasses, std::move(labels));
}

std::vector<bool> boundary_pixels(const SegMask& mask) {
  const int w = mask.width();
  const int h = mask.height();
  std::vector<bool> on(mask.pixel_count(), false);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int l = mask.at(x, y);
      on[static_cast<std::size_t>(y) * w + x] =
          (x > 0 && mask.at(x - 1, y) != l) ||
          (x + 1 < w && mask.at(x + 1, y) != l) ||
          (y > 0 && mask.at(x, y - 1) != l) ||
          (y + 1 < h && mask.at(x, y + 1) != l);
    }
  }
  return on;
}

Sketch mask_to_sketch(const SegMask& mask, std::uint64_t seed,
                      const SketchStyle& style) {
  const int w = mask.width();
  const int h = mask.height();
  const auto on = boundary_pixels(mask);
  std::vector<double> out(on.size(), 0.0);
  constexpr int kDx[4] = {1, -1, 0, 0};
  constexpr int kDy[4] = {0, 0, 1, -1};
  for (std::size_t p = 0; p < on.size(); ++p) {
    if (!on[p]) continue;
    const std::uint64_t base = 4 * p;
    if (rng::uniform_at(seed, base) < style.dropout) continue;
    int x = static_cast<int>(p % w);
    int y = static_cast<int>(p / w);
    if (rng::uniform_at(seed, base + 1) < style.jitter) {
      const int dir = static_cast<int>(rng::at(seed, base + 2) & 3u);
      x = std::clamp(x + kDx[dir], 0, w - 1);
      y = std::clamp(y + kDy[dir], 0, h - 1);
    }
    const double v = style.min_intensity +
                     (1.0 - style.min_intensity) * rng::uniform_at(seed, base + 3);
    double& dst = out[static_cast<std::size_t>(y) * w + x];
    dst = std::max(dst, v);
  }
  return Sketch(w, h, std::move(out));
}

int hair_group(const FaceSpec& spec) {
  if (spec.hair_coverage_deg < 140.0) return 0;
  if (spec.hair_coverage_deg < 220.0) return 1;
  return 2;
}

// ---- dataset ---------------------------------------------------------------

void DatasetManifest::validate() const {
  if (count < 1) throw ConfigError("dataset count must be >= 1");
  if (resolution < 16) throw ConfigError("dataset resolution must be >= 16");
  const double sum = splits.train + splits.val + splits.test;
  if (splits.train < 0 || splits.val < 0 || splits.test < 0 ||
      std::abs(sum - 1.0) > 1e-9) {
    throw ConfigError("split ratios must be nonnegative and sum to 1");
  }
  if (classes.size() != static_cast<std::size_t>(kFaceClasses)) {
    throw ConfigError("dataset class list must have 6 entries");
  }
}

std::array<int, 3> allocate_splits(int count, const SplitRatios& splits) {
  const std::array<double, 3> ratios = {splits.train, splits.val, splits.test};
  std::array<int, 3> n{};
  std::array<double, 3> frac{};
  int assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double q = count * ratios[i];
    n[i] = static_cast<int>(std::floor(q + 1e-9));
    frac[i] = q - n[i];
    assigned += n[i];
  }
  std::array<int, 3> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return frac[a] > frac[b] + 1e-12; });
  for (int k = 0; assigned < count; k = (k + 1) % 3, ++assigned) ++n[order[k]];
  return n;
}

std::string sample_file_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05d.pgm", index);
  return buf;
}

GeneratedSample generate_sample(std::uint64_t dataset_seed, int index,
                                int resolution) {
  const auto i = static_cast<std::uint64_t>(index);
  FaceSpec spec = sample_spec(rng::derive(dataset_seed, {i, 0}));
  SegMask mask = rasterize_mask(spec, resolution, resolution);
  Sketch sketch = mask_to_sketch(mask, rng::derive(dataset_seed, {i, 1}));
  return {std::move(spec), std::move(mask), std::move(sketch)};
}

void save_manifest(const DatasetManifest& m) {
  nlohmann::ordered_json j;
  j["count"] = m.count;
  j["seed"] = m.seed;
  j["splits"] = {{"train", m.splits.train}, {"val", m.splits.val}, {"test", m.splits.test}};
  j["classes"] = m.classes;
  j["resolution"] = m.resolution;
  const std::string text = j.dump(2) + "\n";
  write_file(m.root / "manifest.json",
             std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void generate_dataset(const DatasetManifest& manifest) {
  manifest.validate();
  const auto counts = allocate_splits(manifest.count, manifest.splits);
  for (int s = 0; s < 3; ++s) {
    if (counts[s] == 0 && !manifest.allow_empty) {
      throw ConfigError(std::string("empty split \"") + kSplitNames[s] +
                        "\" for count " + std::to_string(manifest.count));
    }
  }
  int global = 0;
  for (int s = 0; s < 3; ++s) {
    const auto dir = manifest.root / kSplitNames[s];
    std::error_code ec;
    std::filesystem::create_directories(dir / "sketch", ec);
    if (!ec) std::filesystem::create_directories(dir / "mask", ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    std::ostringstream meta;
    meta << "file,global_index,group\n";
    for (int k = 0; k < counts[s]; ++k, ++global) {
      const auto sample = generate_sample(manifest.seed, global, manifest.resolution);
      const std::string name = sample_file_name(k);
      save_pgm(sample.sketch, dir / "sketch" / name);
      save_mask_pgm(sample.mask, dir / "mask" / name);
      meta << name << ',' << global << ',' << hair_group(sample.spec) << '\n';
    }
    const std::string text = meta.str();
    write_file(dir / "meta.csv",
               std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  }
  save_manifest(manifest);
}

DatasetManifest load_manifest(const std::filesystem::path& root) {
  const auto path = root / "manifest.json";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  DatasetManifest m;
  m.root = root;
  try {
    const auto j = nlohmann::json::parse(in);
    m.count = j.at("count").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.splits.train = j.at("splits").at("train").get<double>();
    m.splits.val = j.at("splits").at("val").get<double>();
    m.splits.test = j.at("splits").at("test").get<double>();
    m.classes = j.at("classes").get<std::vector<std::string>>();
    m.resolution = j.at("resolution").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  m.validate();
  return m;
}

std::vector<DatasetSample> load_split(const std::filesystem::path& root,
                                      const std::string& split, int num_classes) {
  const auto dir = root / split;
  const auto meta_path = dir / "meta.csv";
  std::ifstream meta(meta_path);
  if (!meta) throw IoError("cannot open " + meta_path.string());
  std::string line;
  std::getline(meta, line);  // header
  std::vector<DatasetSample> out;
  while (std::getline(meta, line)) {
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) {
      throw FormatError(meta_path.string() + ": malformed row \"" + line + "\"");
    }
    const std::string name = line.substr(0, c1);
    DatasetSample s;
    s.sketch = load_pgm(dir / "sketch" / name);
    s.mask = load_mask_pgm(dir / "mask" / name, num_classes);
    s.group = std::stoi(line.substr(c2 + 1));
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace s3d
