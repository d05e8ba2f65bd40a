#include "s3d/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>

#include "s3d/augment.hpp"
#include "s3d/embedview.hpp"
#include "s3d/error.hpp"
#include "s3d/losses.hpp"
#include "s3d/mask23d.hpp"
#include "s3d/metrics.hpp"
#include "s3d/rng.hpp"
#include "s3d/training.hpp"

namespace s3d {

namespace {

std::string fmt(const char* f, double v) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

SelfCheck loss_oracles() {
  const ProbMap uniform(2, 2, 4, std::vector<double>(16, 0.25));
  const OneHotMask y4 = one_hot(SegMask(2, 2, 4, {0, 1, 2, 3}));
  const double ce = cross_entropy_loss(y4, uniform);
  const OneHotMask y2 = one_hot(SegMask(4, 1, 2, {0, 0, 1, 1}));
  const ProbMap hard(4, 1, 2, {1, 0, 1, 0, 1, 0, 1, 0});
  const double dice = dice_loss(y2, hard, 1e-6);
  const double sv = style_vector_loss(StyleVector(1, 2, {1.0, 2.0}), BottleneckEmbedding(1, 2));
  LossConfig w;
  w.lambda_sv = 2.0;
  const double total = total_loss(1.0, 2.0, 0.5, w).l_total;
  const bool ok = std::abs(ce - std::log(4.0)) <= 1e-9 && std::abs(dice - 2.0 / 3.0) <= 1e-6 &&
                  sv == 5.0 && std::abs(total - 4.5) <= 1e-12;
  return {"loss oracles", ok,
          fmt("ce %.12g", ce) + fmt(" dice %.9g", dice) + fmt(" sv %g", sv) + fmt(" total %g", total)};
}

SelfCheck loss_gradients() {
  SplitMix64 g(11);
  const int n = 64, c = 3;
  std::vector<double> logits(n * c);
  for (double& v : logits) v = g.normal();
  const ProbMap p = ProbMap::softmax(Tensor({8, 8, 3}, logits));
  std::vector<int> lab(n);
  for (int& v : lab) v = static_cast<int>(g.below(3));
  const OneHotMask y = one_hot(SegMask(8, 8, 3, lab));
  double worst = 0.0;
  auto check = [&](const std::function<double(const ProbMap&)>& f, const std::vector<double>& ga) {
    const double h = 1e-7;  // keeps perturbed rows inside the simplex tolerance
    std::vector<double> data(p.data().begin(), p.data().end());
    double err = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double o = data[i];
      data[i] = o + h;
      const double up = f(ProbMap(8, 8, 3, data));
      data[i] = o - h;
      const double down = f(ProbMap(8, 8, 3, data));
      data[i] = o;
      const double num = (up - down) / (2 * h);
      err = std::max(err, std::abs(num - ga[i]));
      scale = std::max({scale, std::abs(num), std::abs(ga[i])});
    }
    worst = std::max(worst, err / scale);
  };
  check([&](const ProbMap& q) { return cross_entropy_loss(y, q); }, cross_entropy_loss_grad(y, p));
  check([&](const ProbMap& q) { return dice_loss(y, q, 1e-6); }, dice_loss_grad(y, p, 1e-6));

  StyleVector a(3, 8);
  BottleneckEmbedding b(3, 8);
  for (double& v : a.data) v = g.normal();
  for (double& v : b.data) v = g.normal();
  const std::vector<double> gsv = style_vector_loss_grad(a, b);
  double err = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < b.data.size(); ++i) {
    const double o = b.data[i], h = 1e-6;
    b.data[i] = o + h;
    const double up = style_vector_loss(a, b);
    b.data[i] = o - h;
    const double down = style_vector_loss(a, b);
    b.data[i] = o;
    const double num = (up - down) / (2 * h);
    err = std::max(err, std::abs(num - gsv[i]));
    scale = std::max({scale, std::abs(num), std::abs(gsv[i])});
  }
  worst = std::max(worst, err / scale);
  return {"loss gradients vs finite differences", worst < 1e-6, fmt("max rel %.3g", worst)};
}

SelfCheck renderer() {
  SplitMix64 g(5);
  double worst = 0.0;
  for (int r = 0; r < 1000; ++r) {
    const int n = 2 + static_cast<int>(g.below(31));
    std::vector<FieldSample> s(n);
    std::vector<double> d(n);
    double optical = 0.0;
    for (int i = 0; i < n; ++i) {
      s[i].density = g.uniform(0.0, 3.0);
      s[i].semantic = {1.0};
      d[i] = g.uniform(0.01, 0.5);
      optical += s[i].density * d[i];
    }
    std::vector<double> w;
    const RayResult res = composite(s, d, {1, 1, 1}, &w);
    worst = std::max(worst, std::abs(res.weight_sum - (1.0 - std::exp(-optical))));
  }
  std::vector<FieldSample> two(2);
  two[0].density = std::log(2.0);
  two[1].density = std::log(2.0);
  two[0].color = {1, 0, 0};
  two[1].color = {0, 1, 0};
  std::vector<double> w;
  const std::vector<double> unit = {1.0, 1.0};
  const RayResult r2 = composite(two, unit, {0, 0, 1}, &w);
  const bool pair_ok = std::abs(w[0] - 0.5) <= 1e-9 && std::abs(w[1] - 0.25) <= 1e-9 &&
                       std::abs(r2.color[2] - 0.25) <= 1e-9;
  std::vector<FieldSample> empty(4);
  const RayResult r0 = composite(empty, std::vector<double>(4, 0.3), {0.2, 0.4, 0.6}, nullptr);
  const bool empty_ok = r0.weight_sum == 0.0 && r0.color[0] == 0.2 && r0.color[2] == 0.6;
  return {"renderer conservation", worst <= 1e-12 && pair_ok && empty_ok, fmt("telescoping %.3g", worst)};
}

SelfCheck triplane() {
  TriPlane tp;
  tp.res = 5;
  tp.channels = 2;
  SplitMix64 g(9);
  for (auto& pl : tp.planes) {
    pl.resize(5 * 5 * 2);
    for (double& v : pl) v = g.normal();
  }
  // Texel centres sit at (2i + 1) / R - 1.
  auto bilinear = [&](int plane, double a, double b, int f) {
    const double u = std::clamp((a + 1) * 2.5 - 0.5, 0.0, 4.0);
    const double v = std::clamp((b + 1) * 2.5 - 0.5, 0.0, 4.0);
    double acc = 0.0;
    for (int i = 0; i < 5; ++i) {
      for (int j = 0; j < 5; ++j) {
        const double wu = std::max(0.0, 1.0 - std::abs(u - i));
        const double wv = std::max(0.0, 1.0 - std::abs(v - j));
        acc += wu * wv * tp.at(plane, i, j, f);
      }
    }
    return acc;
  };
  double worst = 0.0;
  for (int k = 0; k < 10000; ++k) {
    const Vec3 p{g.uniform(-1, 1), g.uniform(-1, 1), g.uniform(-1, 1)};
    const auto got = sample_triplane(tp, p);
    for (int f = 0; f < 2; ++f) {
      const double want = bilinear(0, p.x, p.y, f) + bilinear(1, p.x, p.z, f) + bilinear(2, p.y, p.z, f);
      worst = std::max(worst, std::abs(got[f] - want));
    }
  }
  return {"tri-plane sampling vs brute force", worst <= 1e-12, fmt("max abs %.3g", worst)};
}

SelfCheck metric_oracles() {
  const SegMask t(4, 1, 2, {0, 0, 1, 1});
  const SegMask p(4, 1, 2, {0, 1, 1, 1});
  const double m = miou(confusion(t, p));
  const std::vector<int> pos = {1, 0, 1, 0};
  const std::vector<double> sc = {0.9, 0.8, 0.7, 0.6};
  const double ap = average_precision(pos, sc);
  const double perfect = miou(confusion(t, t));
  const ProbMap hard(4, 1, 2, {1, 0, 1, 0, 0, 1, 0, 1});
  const double perfect_ap = map(one_hot(t), hard);
  const bool ok = std::abs(m - 7.0 / 12.0) <= 1e-12 && std::abs(ap - 5.0 / 6.0) <= 1e-12 &&
                  perfect == 1.0 && perfect_ap == 1.0;
  return {"metric oracles", ok, fmt("miou %.15g", m) + fmt(" ap %.15g", ap)};
}

SelfCheck tsne_check() {
  SplitMix64 g(3);
  const int n = 60;
  std::vector<double> pts;
  std::vector<int> labels;
  for (int i = 0; i < n; ++i) {
    const int c = i % 3;
    for (int k = 0; k < 5; ++k) pts.push_back(10.0 * (k == c) + 0.5 * g.normal());
    labels.push_back(c);
  }
  const auto cond = conditional_affinities(pts, n, 5, 15.0);
  double worst = 0.0;
  for (double v : row_perplexities(cond, n)) worst = std::max(worst, std::abs(v - 15.0));
  TsneConfig cfg;
  cfg.seed = 1;
  const TsneResult r = tsne_embed(affinities(pts, n, 5, 15.0), n, cfg);
  const double sil = silhouette(r.coords, 2, labels);
  const bool ok = worst <= 1e-5 && r.final_kl < r.initial_kl && sil >= 0.5;
  return {"t-SNE calibration and separation", ok,
          fmt("perplexity err %.3g", worst) + fmt(" kl %.4g", r.initial_kl) +
              fmt(" -> %.4g", r.final_kl) + fmt(" silhouette %.3f", sil)};
}

SelfCheck augmentation() {
  AugmentPolicy policy;
  int counts[3] = {0, 0, 0};
  for (std::uint64_t s = 0; s < 10000; ++s) ++counts[static_cast<int>(draw_branch(policy, s))];
  const double f0 = counts[0] / 1e4, f1 = counts[1] / 1e4, f2 = counts[2] / 1e4;
  const bool freq = std::abs(f0 - 0.5) <= 0.02 && std::abs(f1 - 0.25) <= 0.02 && std::abs(f2 - 0.25) <= 0.02;
  SplitMix64 g(4);
  bool order = true;
  for (int k = 0; k < 20 && order; ++k) {
    std::vector<double> px(32 * 32);
    for (double& v : px) v = g.uniform() < 0.2 ? 1.0 : 0.0;
    const Sketch s(32, 32, px);
    const Sketch d = dilate(s, 3), e = erode(s, 3);
    for (std::size_t i = 0; i < px.size(); ++i) order = order && d.data()[i] >= px[i] && e.data()[i] <= px[i];
  }
  return {"augmentation branches and order", freq && order,
          fmt("freq %.4f", f0) + fmt(" %.4f", f1) + fmt(" %.4f", f2)};
}

SelfCheck gradients() {
  const FdReport r = finite_diff_check(tiny_unet_config(), 0);
  double worst = 0.0;
  std::string name;
  for (const FdEntry& e : r.entries) {
    if (e.max_rel_error >= worst) {
      worst = e.max_rel_error;
      name = e.name;
    }
  }
  return {"U-Net gradients vs finite differences", r.passed,
          fmt("worst %.3g", worst) + " (" + name + ")"};
}

}  // namespace

std::vector<SelfCheck> run_selftest(bool with_gradients) {
  std::vector<std::function<SelfCheck()>> checks = {loss_oracles, loss_gradients, renderer,
                                                    triplane,     metric_oracles, tsne_check,
                                                    augmentation};
  if (with_gradients) checks.push_back(gradients);
  std::vector<SelfCheck> out;
  for (const auto& c : checks) {
    try {
      out.push_back(c());
    } catch (const std::exception& e) {
      out.push_back({"exception", false, e.what()});
    }
  }
  return out;
}

}  // namespace s3d
