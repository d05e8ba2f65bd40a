#pragma once

#include <vector>

namespace s3d {

// w+: the L x D latent that modulates the mask-to-3D generator.
struct StyleVector {
  int rows = 0;
  int dim = 0;
  std::vector<double> data;  // row-major L x D

  StyleVector() = default;
  StyleVector(int l, int d) : rows(l), dim(d), data(static_cast<std::size_t>(l) * d, 0.0) {}
  StyleVector(int l, int d, std::vector<double> v) : rows(l), dim(d), data(std::move(v)) {}
  friend bool operator==(const StyleVector&, const StyleVector&) = default;
};

// w^E: the U-Net bottleneck projected to the style-vector shape.
struct BottleneckEmbedding {
  int rows = 0;
  int dim = 0;
  std::vector<double> data;

  BottleneckEmbedding() = default;
  BottleneckEmbedding(int l, int d)
      : rows(l), dim(d), data(static_cast<std::size_t>(l) * d, 0.0) {}
  BottleneckEmbedding(int l, int d, std::vector<double> v)
      : rows(l), dim(d), data(std::move(v)) {}
  friend bool operator==(const BottleneckEmbedding&, const BottleneckEmbedding&) = default;
};

}  // namespace s3d
