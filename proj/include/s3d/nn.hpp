#pragma once

// Minimal layer kit with hand-written backward passes. Feature maps are
// channel-major (C, H, W); every layer's backward accumulates parameter
// gradients into a ParamSet shaped like the parameters.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "s3d/tensor.hpp"

namespace s3d {

// Ordered, named parameter tensors. A frozen set rejects every mutation.
class ParamSet {
 public:
  std::size_t add(std::string name, Tensor value);

  std::size_t size() const { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t index_of(const std::string& name) const;

  const Tensor& operator[](std::size_t i) const { return tensors_[i]; }
  const Tensor& get(const std::string& name) const { return tensors_[index_of(name)]; }
  // Throws StateError when frozen.
  Tensor& mutable_at(std::size_t i);

  void freeze() { frozen_ = true; }
  bool frozen() const { return frozen_; }

  std::size_t total_size() const;
  bool all_finite() const;
  ParamSet zeros_like() const;  // never frozen
  void set_zero();
  // this += scale * other, over identically shaped sets.
  void axpy(double scale, const ParamSet& other);

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    return a.names_ == b.names_ && a.tensors_ == b.tensors_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  bool frozen_ = false;
};

struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  FeatureMap() = default;
  FeatureMap(int c, int h, int w)
      : channels(c), height(h), width(w),
        data(static_cast<std::size_t>(c) * h * w, 0.0) {}

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  double& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
};

inline constexpr double kLeakySlope = 0.2;

// Xavier-uniform bound sqrt(6 / (fan_in + fan_out)).
double xavier_bound(std::size_t fan_in, std::size_t fan_out);
// Uniform(-bound, bound), drawn element-wise from the counter stream of
// `seed`; the open-interval draw keeps values strictly inside the bound.
Tensor uniform_tensor(std::vector<std::size_t> shape, double bound,
                      std::uint64_t seed);

// 2-D convolution with zero padding; weights (Cout, Cin, k, k), bias (Cout).
struct Conv2d {
  std::size_t weight = 0;  // index into ParamSet
  std::size_t bias = 0;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  // Registers "<prefix>.w" and "<prefix>.b" with Xavier-initialised weights
  // and zero bias.
  static Conv2d create(ParamSet& params, const std::string& prefix, int cin,
                       int cout, int kernel, int stride, int pad,
                       std::uint64_t seed);

  int out_size(int in) const { return (in + 2 * pad - kernel) / stride + 1; }
  FeatureMap forward(const ParamSet& params, const FeatureMap& x) const;
  // Returns dL/dx; accumulates dL/dW and dL/db into `grads`.
  FeatureMap backward(const ParamSet& params, const FeatureMap& x,
                      const FeatureMap& dy, ParamSet& grads) const;
};

// y = W x + b with W (out, in).
struct Linear {
  std::size_t weight = 0;
  std::size_t bias = 0;
  int in_features = 0;
  int out_features = 0;

  static Linear create(ParamSet& params, const std::string& prefix, int in,
                       int out, std::uint64_t seed);

  std::vector<double> forward(const ParamSet& params,
                              const std::vector<double>& x) const;
  std::vector<double> backward(const ParamSet& params,
                               const std::vector<double>& x,
                               const std::vector<double>& dy,
                               ParamSet& grads) const;
};

void leaky_relu_inplace(std::vector<double>& v);
// dy scaled by the activation's slope at pre-activation `pre`.
void leaky_relu_backward_inplace(const std::vector<double>& pre,
                                 std::vector<double>& dy);

// 2x2 max pooling; `argmax` receives the flat input index of each winner
// (first maximum in row-major window order).
FeatureMap maxpool2(const FeatureMap& x, std::vector<std::uint32_t>& argmax);
FeatureMap maxpool2_backward(const FeatureMap& x,
                             const std::vector<std::uint32_t>& argmax,
                             const FeatureMap& dy);

FeatureMap upsample2(const FeatureMap& x);
FeatureMap upsample2_backward(const FeatureMap& dy);

FeatureMap concat_channels(const FeatureMap& a, const FeatureMap& b);
void split_channels(const FeatureMap& d, int a_channels, FeatureMap& da,
                    FeatureMap& db);

}  // namespace s3d
