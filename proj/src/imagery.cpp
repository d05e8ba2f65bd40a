#include "s3d/imagery.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "s3d/error.hpp"

namespace s3d {

namespace {

void check_dims(int width, int height) {
  if (width < 1 || height < 1) {
    throw ValueError("image dimensions must be positive, got " +
                     std::to_string(width) + "x" + std::to_string(height));
  }
}

std::size_t pixels(int width, int height) {
  return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
}

}  // namespace

// ---- Sketch -------------------------------------------------------------

Sketch::Sketch(int width, int height)
    : width_(width), height_(height) {
  check_dims(width, height);
  data_.assign(pixels(width, height), 0.0);
}

Sketch::Sketch(int width, int height, std::vector<double> data)
    : width_(width), height_(height), data_(std::move(data)) {
  check_dims(width, height);
  if (data_.size() != pixels(width, height)) {
    throw ValueError("sketch data length does not match dimensions");
  }
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!(data_[i] >= 0.0 && data_[i] <= 1.0)) {
      throw ValueError("sketch value out of [0,1] at pixel " +
                       std::to_string(i));
    }
  }
}

// ---- SegMask ------------------------------------------------------------

SegMask::SegMask(int width, int height, int num_classes)
    : SegMask(width, height, num_classes,
              std::vector<int>(pixels(std::max(width, 0), std::max(height, 0)),
                               0)) {}

SegMask::SegMask(int width, int height, int num_classes,
                 std::vector<int> labels)
    : width_(width),
      height_(height),
      num_classes_(num_classes),
      labels_(std::move(labels)) {
  check_dims(width, height);
  if (num_classes < 2) throw ValueError("mask needs at least 2 classes");
  if (labels_.size() != pixels(width, height)) {
    throw ValueError("mask label count does not match dimensions");
  }
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] < 0 || labels_[i] >= num_classes) {
      throw ValueError("label " + std::to_string(labels_[i]) +
                       " out of range at pixel " + std::to_string(i));
    }
  }
}

// ---- OneHotMask / ProbMap -------------------------------------------------

OneHotMask::OneHotMask(int width, int height, int num_classes,
                       std::vector<double> data)
    : width_(width),
      height_(height),
      num_classes_(num_classes),
      data_(std::move(data)) {
  check_dims(width, height);
  if (num_classes < 2) throw ValueError("one-hot mask needs at least 2 classes");
  const std::size_t n = pixels(width, height);
  if (data_.size() != n * num_classes) {
    throw ValueError("one-hot data length does not match dimensions");
  }
  for (std::size_t p = 0; p < n; ++p) {
    int ones = 0;
    for (int c = 0; c < num_classes; ++c) {
      const double v = data_[p * num_classes + c];
      if (v == 1.0) {
        ++ones;
      } else if (v != 0.0) {
        throw ValueError("one-hot entry not in {0,1} at pixel " +
                         std::to_string(p));
      }
    }
    if (ones != 1) {
      throw ValueError("pixel " + std::to_string(p) +
                       " is not exactly one-hot");
    }
  }
}

ProbMap::ProbMap(int width, int height, int num_classes,
                 std::vector<double> data)
    : width_(width),
      height_(height),
      num_classes_(num_classes),
      data_(std::move(data)) {
  check_dims(width, height);
  if (num_classes < 2) throw ValueError("probability map needs >= 2 classes");
  const std::size_t n = pixels(width, height);
  if (data_.size() != n * num_classes) {
    throw ValueError("probability data length does not match dimensions");
  }
  for (std::size_t p = 0; p < n; ++p) {
    double sum = 0.0;
    for (int c = 0; c < num_classes; ++c) {
      const double v = data_[p * num_classes + c];
      if (!(v >= 0.0 && v <= 1.0)) {
        throw ValueError("probability out of [0,1] at pixel " +
                         std::to_string(p));
      }
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw ValueError("probabilities at pixel " + std::to_string(p) +
                       " sum to " + std::to_string(sum));
    }
  }
}

ProbMap ProbMap::softmax(const Tensor& logits) {
  if (logits.rank() != 3) throw ConfigError("softmax expects (H, W, C) logits");
  const int h = static_cast<int>(logits.dim(0));
  const int w = static_cast<int>(logits.dim(1));
  const int c = static_cast<int>(logits.dim(2));
  std::vector<double> out(logits.size());
  const auto in = logits.data();
  for (std::size_t p = 0; p < pixels(w, h); ++p) {
    const double* z = in.data() + p * c;
    double* q = out.data() + p * c;
    const double zmax = *std::max_element(z, z + c);
    double sum = 0.0;
    for (int k = 0; k < c; ++k) {
      q[k] = std::exp(z[k] - zmax);
      sum += q[k];
    }
    for (int k = 0; k < c; ++k) q[k] /= sum;
  }
  return ProbMap(w, h, c, std::move(out));
}

OneHotMask one_hot(const SegMask& mask) {
  const int c = mask.num_classes();
  std::vector<double> data(mask.pixel_count() * c, 0.0);
  const auto labels = mask.labels();
  for (std::size_t p = 0; p < labels.size(); ++p) data[p * c + labels[p]] = 1.0;
  return OneHotMask(mask.width(), mask.height(), c, std::move(data));
}

namespace {

template <typename Map>
SegMask argmax_impl(const Map& m) {
  const int c = m.num_classes();
  std::vector<int> labels(m.pixel_count());
  for (std::size_t p = 0; p < labels.size(); ++p) {
    int best = 0;
    for (int k = 1; k < c; ++k) {
      if (m.at(p, k) > m.at(p, best)) best = k;
    }
    labels[p] = best;
  }
  return SegMask(m.width(), m.height(), c, std::move(labels));
}

}  // namespace

SegMask argmax(const OneHotMask& y) { return argmax_impl(y); }
SegMask argmax(const ProbMap& p) { return argmax_impl(p); }

std::array<double, 3> palette_color(int label, int num_classes) {
  if (num_classes < 1 || label < 0 || label >= num_classes) {
    throw ValueError("palette label " + std::to_string(label) +
                     " out of range for " + std::to_string(num_classes) +
                     " classes");
  }
  // HSV -> RGB with s = v = 1.
  const double hue = 360.0 * label / num_classes;
  const double h6 = hue / 60.0;
  const int sector = static_cast<int>(std::floor(h6)) % 6;
  const double f = h6 - std::floor(h6);
  const double q = 1.0 - f;
  switch (sector) {
    case 0: return {1.0, f, 0.0};
    case 1: return {q, 1.0, 0.0};
    case 2: return {0.0, 1.0, f};
    case 3: return {0.0, q, 1.0};
    case 4: return {f, 0.0, 1.0};
    default: return {1.0, 0.0, q};
  }
}

RgbImage colorize(const SegMask& mask) {
  RgbImage img(mask.width(), mask.height());
  const auto labels = mask.labels();
  for (std::size_t p = 0; p < labels.size(); ++p) {
    const auto rgb = palette_color(labels[p], mask.num_classes());
    std::copy(rgb.begin(), rgb.end(), img.data.begin() + p * 3);
  }
  return img;
}

// ---- file helpers -------------------------------------------------------

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path,
                std::span<const std::uint8_t> bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename to " + path.string() + ": " + ec.message());
}

std::uint8_t quantize_unit(double v) {
  if (std::isnan(v)) throw ValueError("NaN pixel value");
  v = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::floor(255.0 * v + 0.5));
}

// ---- Netpbm ------------------------------------------------------------

namespace {

struct PnmHeader {
  int width = 0;
  int height = 0;
  int maxval = 0;
  std::size_t payload_offset = 0;
};

bool is_space(std::uint8_t b) {
  return b == ' ' || b == '\t' || b == '\n' || b == '\r' || b == '\v' ||
         b == '\f';
}

class HeaderReader {
 public:
  HeaderReader(std::span<const std::uint8_t> bytes, const std::string& name)
      : bytes_(bytes), name_(name) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(name_ + ": " + what + " at byte offset " +
                      std::to_string(pos_));
  }

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (is_space(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  int read_uint(const char* field) {
    skip_space_and_comments();
    if (pos_ >= bytes_.size()) fail(std::string("truncated header, missing ") + field);
    if (bytes_[pos_] < '0' || bytes_[pos_] > '9') {
      fail(std::string("expected digit for ") + field);
    }
    long long v = 0;
    while (pos_ < bytes_.size() && bytes_[pos_] >= '0' && bytes_[pos_] <= '9') {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > 1'000'000'000) fail(std::string("value too large for ") + field);
      ++pos_;
    }
    return static_cast<int>(v);
  }

  PnmHeader parse(const char* magic) {
    if (bytes_.size() < 2 || bytes_[0] != magic[0] || bytes_[1] != magic[1]) {
      fail(std::string("expected magic \"") + magic + "\"");
    }
    pos_ = 2;
    if (pos_ >= bytes_.size() || !(is_space(bytes_[pos_]) || bytes_[pos_] == '#')) {
      fail("expected whitespace after magic");
    }
    PnmHeader h;
    h.width = read_uint("width");
    h.height = read_uint("height");
    h.maxval = read_uint("maxval");
    if (h.width < 1 || h.height < 1) fail("zero image dimension");
    if (h.maxval != 255) {
      fail("unsupported maxval " + std::to_string(h.maxval));
    }
    if (pos_ >= bytes_.size() || !is_space(bytes_[pos_])) {
      fail("expected single whitespace before payload");
    }
    ++pos_;
    h.payload_offset = pos_;
    return h;
  }

  std::size_t pos() const { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> pnm_bytes(const char* magic, int width, int height,
                                    std::size_t payload_size) {
  const std::string header = std::string(magic) + "\n" + std::to_string(width) +
                             " " + std::to_string(height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + payload_size);
  return out;
}

std::span<const std::uint8_t> payload(std::span<const std::uint8_t> bytes,
                                      const PnmHeader& h, std::size_t expected,
                                      const std::string& name) {
  const std::size_t have = bytes.size() - h.payload_offset;
  if (have < expected) {
    throw FormatError(name + ": truncated payload, expected " +
                      std::to_string(expected) + " bytes, file ends at byte offset " +
                      std::to_string(bytes.size()));
  }
  return bytes.subspan(h.payload_offset, expected);
}

}  // namespace

std::vector<std::uint8_t> encode_pgm(const Sketch& sketch) {
  auto out = pnm_bytes("P5", sketch.width(), sketch.height(), sketch.pixel_count());
  for (double v : sketch.data()) out.push_back(quantize_unit(v));
  return out;
}

std::vector<std::uint8_t> encode_mask_pgm(const SegMask& mask) {
  if (mask.num_classes() > 256) {
    throw ValueError("mask with more than 256 classes cannot be stored as bytes");
  }
  auto out = pnm_bytes("P5", mask.width(), mask.height(), mask.pixel_count());
  for (int l : mask.labels()) out.push_back(static_cast<std::uint8_t>(l));
  return out;
}

std::vector<std::uint8_t> encode_ppm(const RgbImage& image) {
  if (image.data.size() != pixels(image.width, image.height) * 3) {
    throw ValueError("RGB image data length does not match dimensions");
  }
  auto out = pnm_bytes("P6", image.width, image.height, image.data.size());
  for (double v : image.data) out.push_back(quantize_unit(v));
  return out;
}

Sketch load_pgm(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const PnmHeader h = HeaderReader(bytes, path.string()).parse("P5");
  const auto body = payload(bytes, h, pixels(h.width, h.height), path.string());
  std::vector<double> data(body.size());
  std::transform(body.begin(), body.end(), data.begin(),
                 [](std::uint8_t b) { return b / 255.0; });
  return Sketch(h.width, h.height, std::move(data));
}

void save_pgm(const Sketch& sketch, const std::filesystem::path& path) {
  write_file(path, encode_pgm(sketch));
}

SegMask load_mask_pgm(const std::filesystem::path& path, int num_classes) {
  const auto bytes = read_file(path);
  const PnmHeader h = HeaderReader(bytes, path.string()).parse("P5");
  const auto body = payload(bytes, h, pixels(h.width, h.height), path.string());
  std::vector<int> labels(body.size());
  for (std::size_t i = 0; i < body.size(); ++i) {
    if (body[i] >= num_classes) {
      throw ValueError(path.string() + ": label " + std::to_string(body[i]) +
                       " >= num_classes " + std::to_string(num_classes) +
                       " at pixel " + std::to_string(i));
    }
    labels[i] = body[i];
  }
  return SegMask(h.width, h.height, num_classes, std::move(labels));
}

void save_mask_pgm(const SegMask& mask, const std::filesystem::path& path) {
  write_file(path, encode_mask_pgm(mask));
}

RgbImage load_ppm(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const PnmHeader h = HeaderReader(bytes, path.string()).parse("P6");
  const auto body =
      payload(bytes, h, pixels(h.width, h.height) * 3, path.string());
  RgbImage img(h.width, h.height);
  std::transform(body.begin(), body.end(), img.data.begin(),
                 [](std::uint8_t b) { return b / 255.0; });
  return img;
}

void save_ppm(const RgbImage& image, const std::filesystem::path& path) {
  write_file(path, encode_ppm(image));
}

// ---- S3DT ----------------------------------------------------------------

namespace {

constexpr std::uint8_t kTensorMagic[4] = {'S', '3', 'D', 'T'};
constexpr std::uint8_t kTensorVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  std::vector<std::uint8_t> out(std::begin(kTensorMagic), std::end(kTensorMagic));
  out.push_back(kTensorVersion);
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
  out.reserve(out.size() + 4 * t.size());
  for (double v : t.data()) {
    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
  auto need = [&](std::size_t end, const char* what) {
    if (bytes.size() < end) {
      throw FormatError(std::string("S3DT truncated while reading ") + what +
                        " at byte offset " + std::to_string(bytes.size()));
    }
  };
  need(5, "header");
  if (!std::equal(std::begin(kTensorMagic), std::end(kTensorMagic), bytes.begin())) {
    throw FormatError("S3DT bad magic at byte offset 0");
  }
  if (bytes[4] != kTensorVersion) {
    throw FormatError("S3DT unsupported version " + std::to_string(bytes[4]) +
                      " at byte offset 4");
  }
  need(9, "rank");
  const std::uint32_t rank = get_u32(bytes, 5);
  if (rank == 0 || rank > 16) {
    throw FormatError("S3DT invalid rank " + std::to_string(rank) +
                      " at byte offset 5");
  }
  std::size_t pos = 9;
  need(pos + 4 * std::size_t(rank), "dims");
  std::vector<std::size_t> shape(rank);
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i, pos += 4) {
    shape[i] = get_u32(bytes, pos);
    if (shape[i] == 0) {
      throw FormatError("S3DT zero dimension at byte offset " + std::to_string(pos));
    }
    count *= shape[i];
  }
  need(pos + 4 * count, "payload");
  if (bytes.size() != pos + 4 * count) {
    throw FormatError("S3DT trailing bytes at byte offset " +
                      std::to_string(pos + 4 * count));
  }
  std::vector<double> data(count);
  for (std::size_t i = 0; i < count; ++i, pos += 4) {
    data[i] = std::bit_cast<float>(get_u32(bytes, pos));
  }
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const Tensor& t, const std::filesystem::path& path) {
  write_file(path, encode_tensor(t));
}

Tensor load_tensor(const std::filesystem::path& path) {
  try {
    return decode_tensor(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace s3d
