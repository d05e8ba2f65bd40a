#pragma once

// Raster types shared by every stage of the pipeline, plus the binary
// Netpbm (P5/P6) and S3DT tensor codecs.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "s3d/tensor.hpp"

namespace s3d {

// Grayscale line drawing, values in [0, 1], row-major.
class Sketch {
 public:
  Sketch() = default;
  Sketch(int width, int height);  // all zero
  Sketch(int width, int height, std::vector<double> data);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t pixel_count() const { return data_.size(); }
  std::span<const double> data() const { return data_; }
  double at(int x, int y) const { return data_[idx(x, y)]; }

  friend bool operator==(const Sketch&, const Sketch&) = default;

 private:
  std::size_t idx(int x, int y) const {
    return static_cast<std::size_t>(y) * width_ + x;
  }
  int width_ = 0;
  int height_ = 0;
  std::vector<double> data_;
};

// Integer label map with C >= 2 classes.
class SegMask {
 public:
  SegMask() = default;
  SegMask(int width, int height, int num_classes);  // all class 0
  SegMask(int width, int height, int num_classes, std::vector<int> labels);

  int width() const { return width_; }
  int height() const { return height_; }
  int num_classes() const { return num_classes_; }
  std::size_t pixel_count() const { return labels_.size(); }
  std::span<const int> labels() const { return labels_; }
  int at(int x, int y) const {
    return labels_[static_cast<std::size_t>(y) * width_ + x];
  }

  friend bool operator==(const SegMask&, const SegMask&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  int num_classes_ = 0;
  std::vector<int> labels_;
};

// Exactly-one-hot lift of a SegMask, indexed (pixel, class).
class OneHotMask {
 public:
  OneHotMask() = default;
  OneHotMask(int width, int height, int num_classes, std::vector<double> data);

  int width() const { return width_; }
  int height() const { return height_; }
  int num_classes() const { return num_classes_; }
  std::size_t pixel_count() const {
    return static_cast<std::size_t>(width_) * height_;
  }
  std::span<const double> data() const { return data_; }
  double at(std::size_t pixel, int c) const {
    return data_[pixel * num_classes_ + c];
  }

 private:
  int width_ = 0;
  int height_ = 0;
  int num_classes_ = 0;
  std::vector<double> data_;
};

// Per-pixel class probabilities, indexed (pixel, class). Each pixel's
// distribution sums to one within 1e-6.
class ProbMap {
 public:
  ProbMap() = default;
  ProbMap(int width, int height, int num_classes, std::vector<double> data);

  // Row-wise softmax of (H, W, C) logits.
  static ProbMap softmax(const Tensor& logits);

  int width() const { return width_; }
  int height() const { return height_; }
  int num_classes() const { return num_classes_; }
  std::size_t pixel_count() const {
    return static_cast<std::size_t>(width_) * height_;
  }
  std::span<const double> data() const { return data_; }
  double at(std::size_t pixel, int c) const {
    return data_[pixel * num_classes_ + c];
  }

 private:
  int width_ = 0;
  int height_ = 0;
  int num_classes_ = 0;
  std::vector<double> data_;
};

// Interleaved RGB image with values nominally in [0, 1].
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<double> data;  // size width*height*3

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), data(std::size_t(w) * h * 3) {}
};

OneHotMask one_hot(const SegMask& mask);
// Per-pixel argmax; ties go to the lower class index.
SegMask argmax(const OneHotMask& y);
SegMask argmax(const ProbMap& p);

// Fixed palette: class i of C maps to hue i*360/C at full saturation and value.
std::array<double, 3> palette_color(int label, int num_classes);
RgbImage colorize(const SegMask& mask);

Sketch load_pgm(const std::filesystem::path& path);
void save_pgm(const Sketch& sketch, const std::filesystem::path& path);
SegMask load_mask_pgm(const std::filesystem::path& path, int num_classes);
void save_mask_pgm(const SegMask& mask, const std::filesystem::path& path);
RgbImage load_ppm(const std::filesystem::path& path);
void save_ppm(const RgbImage& image, const std::filesystem::path& path);

// Encoded bytes, exposed for golden-byte checks.
std::vector<std::uint8_t> encode_pgm(const Sketch& sketch);
std::vector<std::uint8_t> encode_mask_pgm(const SegMask& mask);
std::vector<std::uint8_t> encode_ppm(const RgbImage& image);
std::vector<std::uint8_t> encode_tensor(const Tensor& t);
Tensor decode_tensor(std::span<const std::uint8_t> bytes);

// S3DT: "S3DT", version byte 1, rank (u32 LE), dims (u32 LE each),
// payload as f32 LE. Loading widens back to double.
void save_tensor(const Tensor& t, const std::filesystem::path& path);
Tensor load_tensor(const std::filesystem::path& path);

// Round-half-up quantization to a byte; NaN throws ValueError and values
// outside [0, 1] are clamped.
std::uint8_t quantize_unit(double v);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
// Writes via a temporary sibling and rename.
void write_file(const std::filesystem::path& path,
                std::span<const std::uint8_t> bytes);

}  // namespace s3d
