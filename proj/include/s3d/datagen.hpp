#pragma once

// Procedural face-like (sketch, mask) pairs so that training and evaluation
// need no external dataset.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "s3d/imagery.hpp"

namespace s3d {

// Fixed class schema.
enum FaceClass : int {
  kBackground = 0,
  kSkin = 1,
  kHair = 2,
  kEye = 3,
  kMouth = 4,
  kNeck = 5,
};
inline constexpr int kFaceClasses = 6;
const std::vector<std::string>& face_class_names();

// Ellipse in normalized image coordinates (x right, y down, both in
// [0, 1]); `rotation` in radians.
struct Ellipse {
  double cx = 0.5;
  double cy = 0.5;
  double rx = 0.1;
  double ry = 0.1;
  double rotation = 0.0;

  // Elliptic radius: < 1 inside, 1 on the boundary.
  double rho(double x, double y) const;
  // Boundary point at parametric angle t.
  std::array<double, 2> boundary_point(double t) const;

  friend bool operator==(const Ellipse&, const Ellipse&) = default;
};

struct FaceSpec {
  Ellipse face;
  std::array<Ellipse, 2> eyes;
  Ellipse mouth;
  double hair_thickness = 0.06;        // normalized units
  double hair_coverage_deg = 180.0;    // arc centered on the top of the head
  double neck_half_width = 0.08;
  std::uint64_t seed = 0;

  friend bool operator==(const FaceSpec&, const FaceSpec&) = default;
};

// Eye and mouth ellipses strictly inside the face ellipse, checked on a
// dense boundary sweep.
bool features_inside_face(const FaceSpec& spec);

// Deterministic draw. Face radii in [0.25, 0.40], eye radii in
// [0.03, 0.07], mouth radii in [0.04, 0.10], hair coverage in
// [60, 300] degrees. Draws violating containment are rejected and redrawn
// from the next counter block.
FaceSpec sample_spec(std::uint64_t seed);

// Draw order: background, neck, face, hair, eyes, mouth. Requires
// width, height >= 16.
SegMask rasterize_mask(const FaceSpec& spec, int width, int height);

struct SketchStyle {
  double min_intensity = 0.8;
  double dropout = 0.05;
  double jitter = 0.1;
};

// Boundary pixels under the 4-neighbour label-change rule.
std::vector<bool> boundary_pixels(const SegMask& mask);

// Strokes on class boundaries with seed-driven dropout and 1-pixel jitter.
Sketch mask_to_sketch(const SegMask& mask, std::uint64_t seed,
                      const SketchStyle& style = {});

// Coarse attribute used as a group label in embedding plots:
// 0 short hair (< 140 deg), 1 medium (< 220 deg), 2 long.
int hair_group(const FaceSpec& spec);

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct DatasetManifest {
  std::filesystem::path root;
  int count = 288;
  SplitRatios splits;
  std::uint64_t seed = 0;
  std::vector<std::string> classes = face_class_names();
  int resolution = 64;
  bool allow_empty = false;

  void validate() const;
};

inline constexpr std::array<const char*, 3> kSplitNames = {"train", "val", "test"};

// Largest-remainder allocation of `count` over the three ratios; ties go to
// the earlier split.
std::array<int, 3> allocate_splits(int count, const SplitRatios& splits);

// Pair index `i` of the whole dataset.
struct GeneratedSample {
  FaceSpec spec;
  SegMask mask;
  Sketch sketch;
};
GeneratedSample generate_sample(std::uint64_t dataset_seed, int index,
                                int resolution);

// Writes root/{train,val,test}/{sketch,mask}/NNNNN.pgm, a per-split
// meta.csv (file,global_index,group) and root/manifest.json.
void generate_dataset(const DatasetManifest& manifest);

std::string sample_file_name(int index);  // "00042.pgm"

// Reading back.
struct DatasetSample {
  Sketch sketch;
  SegMask mask;
  int group = 0;
};
DatasetManifest load_manifest(const std::filesystem::path& root);
void save_manifest(const DatasetManifest& manifest);
std::vector<DatasetSample> load_split(const std::filesystem::path& root,
                                      const std::string& split,
                                      int num_classes = kFaceClasses);

}  // namespace s3d
