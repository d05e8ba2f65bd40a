#include "s3d/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "s3d/error.hpp"

namespace s3d {

namespace {

void check_same(const OneHotMask& y, const ProbMap& yhat) {
  if (y.width() != yhat.width() || y.height() != yhat.height() ||
      y.num_classes() != yhat.num_classes()) {
    throw ConfigError("loss inputs differ in dimensions or class count");
  }
}

void check_same(const StyleVector& a, const BottleneckEmbedding& b) {
  if (a.rows != b.rows || a.dim != b.dim || a.data.size() != b.data.size()) {
    throw ConfigError("style vector " + std::to_string(a.rows) + "x" +
                      std::to_string(a.dim) + " vs embedding " +
                      std::to_string(b.rows) + "x" + std::to_string(b.dim));
  }
}

}  // namespace

void LossConfig::validate() const {
  if (!(epsilon > 0.0)) throw ConfigError("loss epsilon must be > 0");
  if (lambda_sv < 0 || lambda_ce < 0 || lambda_dice < 0) {
    throw ConfigError("loss weights must be >= 0");
  }
}

double style_vector_loss(const StyleVector& w_plus, const BottleneckEmbedding& w_e) {
  check_same(w_plus, w_e);
  double s = 0.0;
  for (std::size_t i = 0; i < w_plus.data.size(); ++i) {
    const double d = w_plus.data[i] - w_e.data[i];
    s += d * d;
  }
  return s;
}

std::vector<double> style_vector_loss_grad(const StyleVector& w_plus,
                                           const BottleneckEmbedding& w_e) {
  check_same(w_plus, w_e);
  std::vector<double> g(w_e.data.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = 2.0 * (w_e.data[i] - w_plus.data[i]);
  return g;
}

double cross_entropy_loss(const OneHotMask& y, const ProbMap& yhat) {
  check_same(y, yhat);
  const std::size_t n = y.pixel_count();
  const int c = y.num_classes();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < c; ++k) {
      if (y.at(i, k) != 0.0) s -= y.at(i, k) * std::log(std::max(yhat.at(i, k), kLogClamp));
    }
  }
  return s / static_cast<double>(n);
}

std::vector<double> cross_entropy_loss_grad(const OneHotMask& y, const ProbMap& yhat) {
  check_same(y, yhat);
  const std::size_t n = y.pixel_count();
  const int c = y.num_classes();
  std::vector<double> g(n * c, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < c; ++k) {
      const double p = yhat.at(i, k);
      if (y.at(i, k) != 0.0 && p > kLogClamp) {
        g[i * c + k] = -y.at(i, k) / (p * static_cast<double>(n));
      }
    }
  }
  return g;
}

namespace {

struct DiceSums {
  std::vector<double> inter, pred, truth;
};

DiceSums dice_sums(const OneHotMask& y, const ProbMap& yhat) {
  const int c = y.num_classes();
  DiceSums s{std::vector<double>(c), std::vector<double>(c), std::vector<double>(c)};
  for (std::size_t i = 0; i < y.pixel_count(); ++i) {
    for (int k = 0; k < c; ++k) {
      s.inter[k] += yhat.at(i, k) * y.at(i, k);
      s.pred[k] += yhat.at(i, k);
      s.truth[k] += y.at(i, k);
    }
  }
  return s;
}

}  // namespace

double dice_loss(const OneHotMask& y, const ProbMap& yhat, double epsilon) {
  check_same(y, yhat);
  const int c = y.num_classes();
  const DiceSums s = dice_sums(y, yhat);
  double mean = 0.0;
  for (int k = 0; k < c; ++k) mean += 2.0 * s.inter[k] / (s.pred[k] + s.truth[k] + epsilon);
  return 1.0 - mean / c;
}

std::vector<double> dice_loss_grad(const OneHotMask& y, const ProbMap& yhat,
                                   double epsilon) {
  check_same(y, yhat);
  const int c = y.num_classes();
  const DiceSums s = dice_sums(y, yhat);
  std::vector<double> den(c);
  for (int k = 0; k < c; ++k) den[k] = s.pred[k] + s.truth[k] + epsilon;
  std::vector<double> g(y.pixel_count() * c);
  for (std::size_t i = 0; i < y.pixel_count(); ++i) {
    for (int k = 0; k < c; ++k) {
      const double d = 2.0 * y.at(i, k) / den[k] - 2.0 * s.inter[k] / (den[k] * den[k]);
      g[i * c + k] = -d / c;
    }
  }
  return g;
}

LossReport total_loss(double l_sv, double l_ce, double l_dice, const LossConfig& cfg) {
  LossReport r;
  r.l_sv = l_sv;
  r.l_ce = l_ce;
  r.l_dice = l_dice;
  r.l_total = cfg.lambda_sv * l_sv + cfg.lambda_ce * l_ce + cfg.lambda_dice * l_dice;
  return r;
}

std::vector<double> softmax_backward(const ProbMap& probs,
                                     const std::vector<double>& dprobs) {
  const int c = probs.num_classes();
  const auto p = probs.data();
  if (dprobs.size() != p.size()) throw ConfigError("softmax gradient size mismatch");
  std::vector<double> dz(p.size());
  for (std::size_t i = 0; i < probs.pixel_count(); ++i) {
    double dot = 0.0;
    for (int k = 0; k < c; ++k) dot += dprobs[i * c + k] * p[i * c + k];
    for (int k = 0; k < c; ++k) dz[i * c + k] = p[i * c + k] * (dprobs[i * c + k] - dot);
  }
  return dz;
}

}  // namespace s3d
