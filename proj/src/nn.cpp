#include "s3d/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "s3d/error.hpp"
#include "s3d/rng.hpp"

namespace s3d {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

// (Cin*k*k, Hout*Wout) patch matrix.
std::vector<double> im2col(const FeatureMap& x, int k, int stride, int pad,
                           int hout, int wout) {
  const std::size_t n = static_cast<std::size_t>(hout) * wout;
  std::vector<double> col(static_cast<std::size_t>(x.channels) * k * k * n, 0.0);
  std::size_t row = 0;
  for (int c = 0; c < x.channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++row) {
        double* dst = col.data() + row * n;
        for (int oy = 0; oy < hout; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= x.height) continue;
          const double* src = x.data.data() +
                              (static_cast<std::size_t>(c) * x.height + iy) * x.width;
          double* d = dst + static_cast<std::size_t>(oy) * wout;
          for (int ox = 0; ox < wout; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < x.width) d[ox] = src[ix];
          }
        }
      }
    }
  }
  return col;
}

void col2im(const std::vector<double>& col, int k, int stride, int pad, int hout,
            int wout, FeatureMap& dx) {
  const std::size_t n = static_cast<std::size_t>(hout) * wout;
  std::size_t row = 0;
  for (int c = 0; c < dx.channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++row) {
        const double* src = col.data() + row * n;
        for (int oy = 0; oy < hout; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= dx.height) continue;
          double* d = dx.data.data() +
                      (static_cast<std::size_t>(c) * dx.height + iy) * dx.width;
          const double* s = src + static_cast<std::size_t>(oy) * wout;
          for (int ox = 0; ox < wout; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < dx.width) d[ix] += s[ox];
          }
        }
      }
    }
  }
}

bool is_pointwise(const Conv2d& c) {
  return c.kernel == 1 && c.stride == 1 && c.pad == 0;
}

}  // namespace

// ---- ParamSet --------------------------------------------------------------

std::size_t ParamSet::add(std::string name, Tensor value) {
  if (frozen_) throw StateError("cannot add parameter to a frozen set");
  if (std::find(names_.begin(), names_.end(), name) != names_.end()) {
    throw ConfigError("duplicate parameter name " + name);
  }
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(value));
  return tensors_.size() - 1;
}

std::size_t ParamSet::index_of(const std::string& name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw ConfigError("unknown parameter " + name);
  return static_cast<std::size_t>(it - names_.begin());
}

Tensor& ParamSet::mutable_at(std::size_t i) {
  if (frozen_) {
    throw StateError("parameter " + names_.at(i) + " belongs to a frozen set");
  }
  return tensors_.at(i);
}

std::size_t ParamSet::total_size() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

bool ParamSet::all_finite() const {
  return std::all_of(tensors_.begin(), tensors_.end(),
                     [](const Tensor& t) { return t.all_finite(); });
}

ParamSet ParamSet::zeros_like() const {
  ParamSet z;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    z.add(names_[i], Tensor::zeros_like(tensors_[i]));
  }
  return z;
}

void ParamSet::set_zero() {
  if (frozen_) throw StateError("cannot zero a frozen parameter set");
  for (auto& t : tensors_) t.fill(0.0);
}

void ParamSet::axpy(double scale, const ParamSet& other) {
  if (frozen_) throw StateError("cannot update a frozen parameter set");
  if (other.size() != size()) throw ConfigError("axpy over mismatched sets");
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    auto dst = tensors_[i].data();
    const auto src = other[i].data();
    if (src.size() != dst.size()) throw ConfigError("axpy shape mismatch at " + names_[i]);
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += scale * src[k];
  }
}

// ---- init ------------------------------------------------------------------

double xavier_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

Tensor uniform_tensor(std::vector<std::size_t> shape, double bound,
                      std::uint64_t seed) {
  Tensor t(std::move(shape));
  auto d = t.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    d[i] = bound * (2.0 * rng::uniform_at(seed, i) - 1.0);
  }
  return t;
}

// ---- Conv2d ----------------------------------------------------------------

Conv2d Conv2d::create(ParamSet& params, const std::string& prefix, int cin,
                      int cout, int kernel, int stride, int pad,
                      std::uint64_t seed) {
  Conv2d c;
  c.in_channels = cin;
  c.out_channels = cout;
  c.kernel = kernel;
  c.stride = stride;
  c.pad = pad;
  const std::size_t kk = static_cast<std::size_t>(kernel) * kernel;
  const double b = xavier_bound(cin * kk, cout * kk);
  c.weight = params.add(prefix + ".w",
                        uniform_tensor({std::size_t(cout), std::size_t(cin),
                                        std::size_t(kernel), std::size_t(kernel)},
                                       b, seed));
  c.bias = params.add(prefix + ".b", Tensor({std::size_t(cout)}));
  return c;
}

FeatureMap Conv2d::forward(const ParamSet& params, const FeatureMap& x) const {
  if (x.channels != in_channels) {
    throw ConfigError("conv input has " + std::to_string(x.channels) +
                      " channels, expected " + std::to_string(in_channels));
  }
  const int hout = out_size(x.height);
  const int wout = out_size(x.width);
  const long n = static_cast<long>(hout) * wout;
  const long kdim = static_cast<long>(in_channels) * kernel * kernel;
  FeatureMap y(out_channels, hout, wout);
  ConstRowMap w(params[weight].data().data(), out_channels, kdim);
  RowMap out(y.data.data(), out_channels, n);
  if (is_pointwise(*this)) {
    out.noalias() = w * ConstRowMap(x.data.data(), kdim, n);
  } else {
    const auto col = im2col(x, kernel, stride, pad, hout, wout);
    out.noalias() = w * ConstRowMap(col.data(), kdim, n);
  }
  out.colwise() += ConstVecMap(params[bias].data().data(), out_channels);
  return y;
}

FeatureMap Conv2d::backward(const ParamSet& params, const FeatureMap& x,
                            const FeatureMap& dy, ParamSet& grads) const {
  const int hout = dy.height;
  const int wout = dy.width;
  const long n = static_cast<long>(hout) * wout;
  const long kdim = static_cast<long>(in_channels) * kernel * kernel;
  ConstRowMap w(params[weight].data().data(), out_channels, kdim);
  ConstRowMap g(dy.data.data(), out_channels, n);
  RowMap dw(grads.mutable_at(weight).data().data(), out_channels, kdim);
  // Plain loop: Eigen's vectorized reductions depend on buffer alignment.
  double* db = grads.mutable_at(bias).data().data();
  for (long c = 0; c < out_channels; ++c) {
    const double* row = dy.data.data() + c * n;
    double acc = 0.0;
    for (long i = 0; i < n; ++i) acc += row[i];
    db[c] += acc;
  }

  FeatureMap dx(x.channels, x.height, x.width);
  if (is_pointwise(*this)) {
    ConstRowMap xin(x.data.data(), kdim, n);
    dw.noalias() += g * xin.transpose();
    RowMap(dx.data.data(), kdim, n).noalias() = w.transpose() * g;
    return dx;
  }
  const auto col = im2col(x, kernel, stride, pad, hout, wout);
  dw.noalias() += g * ConstRowMap(col.data(), kdim, n).transpose();
  std::vector<double> dcol(static_cast<std::size_t>(kdim) * n);
  RowMap(dcol.data(), kdim, n).noalias() = w.transpose() * g;
  col2im(dcol, kernel, stride, pad, hout, wout, dx);
  return dx;
}

// ---- Linear ----------------------------------------------------------------

Linear Linear::create(ParamSet& params, const std::string& prefix, int in,
                      int out, std::uint64_t seed) {
  Linear l;
  l.in_features = in;
  l.out_features = out;
  l.weight = params.add(prefix + ".w",
                        uniform_tensor({std::size_t(out), std::size_t(in)},
                                       xavier_bound(in, out), seed));
  l.bias = params.add(prefix + ".b", Tensor({std::size_t(out)}));
  return l;
}

std::vector<double> Linear::forward(const ParamSet& params,
                                    const std::vector<double>& x) const {
  if (static_cast<int>(x.size()) != in_features) {
    throw ConfigError("linear input size " + std::to_string(x.size()) +
                      ", expected " + std::to_string(in_features));
  }
  std::vector<double> y(out_features);
  VecMap out(y.data(), out_features);
  out.noalias() = ConstRowMap(params[weight].data().data(), out_features, in_features) *
                  ConstVecMap(x.data(), in_features);
  out += ConstVecMap(params[bias].data().data(), out_features);
  return y;
}

std::vector<double> Linear::backward(const ParamSet& params,
                                     const std::vector<double>& x,
                                     const std::vector<double>& dy,
                                     ParamSet& grads) const {
  ConstVecMap g(dy.data(), out_features);
  ConstVecMap xin(x.data(), in_features);
  RowMap(grads.mutable_at(weight).data().data(), out_features, in_features)
      .noalias() += g * xin.transpose();
  VecMap(grads.mutable_at(bias).data().data(), out_features) += g;
  std::vector<double> dx(in_features);
  VecMap(dx.data(), in_features).noalias() =
      ConstRowMap(params[weight].data().data(), out_features, in_features)
          .transpose() * g;
  return dx;
}

// ---- elementwise / resampling ----------------------------------------------

void leaky_relu_inplace(std::vector<double>& v) {
  for (double& a : v) a = a > 0.0 ? a : kLeakySlope * a;
}

void leaky_relu_backward_inplace(const std::vector<double>& pre,
                                 std::vector<double>& dy) {
  for (std::size_t i = 0; i < dy.size(); ++i) {
    if (!(pre[i] > 0.0)) dy[i] *= kLeakySlope;
  }
}

FeatureMap maxpool2(const FeatureMap& x, std::vector<std::uint32_t>& argmax) {
  const int ho = x.height / 2;
  const int wo = x.width / 2;
  FeatureMap y(x.channels, ho, wo);
  argmax.assign(y.data.size(), 0);
  std::size_t o = 0;
  for (int c = 0; c < x.channels; ++c) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox, ++o) {
        std::size_t best = (static_cast<std::size_t>(c) * x.height + 2 * oy) * x.width + 2 * ox;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t i =
                (static_cast<std::size_t>(c) * x.height + 2 * oy + dy) * x.width + 2 * ox + dx;
            if (x.data[i] > x.data[best]) best = i;
          }
        }
        y.data[o] = x.data[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return y;
}

FeatureMap maxpool2_backward(const FeatureMap& x,
                             const std::vector<std::uint32_t>& argmax,
                             const FeatureMap& dy) {
  FeatureMap dx(x.channels, x.height, x.width);
  for (std::size_t o = 0; o < dy.data.size(); ++o) dx.data[argmax[o]] += dy.data[o];
  return dx;
}

FeatureMap upsample2(const FeatureMap& x) {
  FeatureMap y(x.channels, 2 * x.height, 2 * x.width);
  for (int c = 0; c < x.channels; ++c) {
    for (int yy = 0; yy < y.height; ++yy) {
      for (int xx = 0; xx < y.width; ++xx) {
        y.at(c, yy, xx) = x.at(c, yy / 2, xx / 2);
      }
    }
  }
  return y;
}

FeatureMap upsample2_backward(const FeatureMap& dy) {
  FeatureMap dx(dy.channels, dy.height / 2, dy.width / 2);
  for (int c = 0; c < dy.channels; ++c) {
    for (int yy = 0; yy < dy.height; ++yy) {
      for (int xx = 0; xx < dy.width; ++xx) {
        dx.at(c, yy / 2, xx / 2) += dy.at(c, yy, xx);
      }
    }
  }
  return dx;
}

FeatureMap concat_channels(const FeatureMap& a, const FeatureMap& b) {
  if (a.height != b.height || a.width != b.width) {
    throw ConfigError("concat of feature maps with different spatial size");
  }
  FeatureMap y(a.channels + b.channels, a.height, a.width);
  std::copy(a.data.begin(), a.data.end(), y.data.begin());
  std::copy(b.data.begin(), b.data.end(), y.data.begin() + a.data.size());
  return y;
}

void split_channels(const FeatureMap& d, int a_channels, FeatureMap& da,
                    FeatureMap& db) {
  da = FeatureMap(a_channels, d.height, d.width);
  db = FeatureMap(d.channels - a_channels, d.height, d.width);
  std::copy(d.data.begin(), d.data.begin() + da.data.size(), da.data.begin());
  std::copy(d.data.begin() + da.data.size(), d.data.end(), db.data.begin());
}

}  // namespace s3d
