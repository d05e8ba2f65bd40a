#include "s3d/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "s3d/error.hpp"

namespace s3d {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  if (shape.empty()) throw ConfigError("tensor shape must have rank >= 1");
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) throw ConfigError("tensor shape entries must be >= 1");
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  const std::size_t n = shape_product(shape_);
  if (data_.size() != n) {
    throw ConfigError("tensor data length " + std::to_string(data_.size()) +
                      " does not match shape product " + std::to_string(n));
  }
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

}  // namespace s3d
