#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "s3d/error.hpp"
#include "s3d/metrics.hpp"
#include "s3d/rng.hpp"

using namespace s3d;

namespace {

SegMask row(int c, std::vector<int> labels) {
  const int w = static_cast<int>(labels.size());
  return SegMask(w, 1, c, std::move(labels));
}

// Threshold sweep: every distinct score is one operating point, and recall
// gains are weighted by the precision at that point.
double threshold_ap(const std::vector<int>& y, const std::vector<double>& s) {
  std::set<double, std::greater<>> thresholds(s.begin(), s.end());
  const double positives = std::accumulate(y.begin(), y.end(), 0.0);
  double ap = 0.0, prev_recall = 0.0;
  for (double t : thresholds) {
    double tp = 0, selected = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (s[i] >= t) {
        ++selected;
        tp += y[i];
      }
    }
    const double recall = tp / positives;
    ap += (recall - prev_recall) * (tp / selected);
    prev_recall = recall;
  }
  return ap;
}

}  // namespace

TEST(Confusion, HandTally) {
  const ConfusionMatrix cm = confusion(row(2, {0, 1}), row(2, {1, 1}));
  EXPECT_EQ(cm.at(0, 0), 0);
  EXPECT_EQ(cm.at(0, 1), 1);
  EXPECT_EQ(cm.at(1, 0), 0);
  EXPECT_EQ(cm.at(1, 1), 1);
  EXPECT_EQ(cm.total(), 2);
}

TEST(Confusion, IdenticalIsDiagonalAndTotals) {
  SplitMix64 g(1);
  std::vector<int> lab(12 * 9);
  for (int& v : lab) v = static_cast<int>(g.below(4));
  const SegMask m(12, 9, 4, lab);
  const ConfusionMatrix cm = confusion(m, m);
  EXPECT_EQ(cm.total(), 108);
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b)
      if (a != b) EXPECT_EQ(cm.at(a, b), 0);
  ConfusionMatrix sum = cm;
  sum += cm;
  EXPECT_EQ(sum.total(), 216);
}

TEST(Confusion, MismatchRejected) {
  EXPECT_THROW(confusion(row(2, {0, 1}), row(2, {0, 1, 1})), ConfigError);
  EXPECT_THROW(confusion(row(2, {0, 1}), row(3, {0, 1})), ConfigError);
}

TEST(Miou, HandValues) {
  EXPECT_NEAR(miou(confusion(row(2, {0, 0, 1, 1}), row(2, {0, 1, 1, 1}))), 7.0 / 12.0, 1e-15);
  const SegMask m = row(3, {0, 1, 2, 2});
  EXPECT_EQ(miou(confusion(m, m)), 1.0);
  const ConfusionMatrix swapped = confusion(row(2, {0, 0, 1}), row(2, {1, 1, 0}));
  const auto iou = per_class_iou(swapped);
  EXPECT_EQ(*iou[0], 0.0);
  EXPECT_EQ(*iou[1], 0.0);
  EXPECT_EQ(miou(swapped), 0.0);
}

TEST(Miou, EmptyClassesExcluded) {
  const ConfusionMatrix cm = confusion(row(4, {0, 1, 1}), row(4, {0, 1, 0}));
  const auto iou = per_class_iou(cm);
  EXPECT_FALSE(iou[2].has_value());
  EXPECT_FALSE(iou[3].has_value());
  EXPECT_NEAR(miou(cm), (0.5 + 0.5) / 2, 1e-15);
  EXPECT_THROW(miou(ConfusionMatrix(3)), UndefinedMetricError);
}

TEST(Miou, RelabelingInvariantAndBounded) {
  SplitMix64 g(2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> t(64), p(64);
    for (int i = 0; i < 64; ++i) {
      t[i] = static_cast<int>(g.below(5));
      p[i] = g.uniform() < 0.6 ? t[i] : static_cast<int>(g.below(5));
    }
    std::vector<int> perm = {0, 1, 2, 3, 4};
    for (int i = 4; i > 0; --i) std::swap(perm[i], perm[g.below(i + 1)]);
    std::vector<int> t2(64), p2(64);
    for (int i = 0; i < 64; ++i) {
      t2[i] = perm[t[i]];
      p2[i] = perm[p[i]];
    }
    const double a = miou(confusion(SegMask(8, 8, 5, t), SegMask(8, 8, 5, p)));
    const double b = miou(confusion(SegMask(8, 8, 5, t2), SegMask(8, 8, 5, p2)));
    EXPECT_NEAR(a, b, 1e-15);
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
  }
}

TEST(AveragePrecision, HandValues) {
  const std::vector<int> y = {1, 0, 1, 0};
  EXPECT_NEAR(average_precision(y, std::vector<double>{0.9, 0.8, 0.7, 0.1}), 5.0 / 6.0, 1e-15);
  EXPECT_EQ(average_precision(y, std::vector<double>{0.9, 0.1, 0.8, 0.2}), 1.0);
  EXPECT_EQ(average_precision(y, std::vector<double>(4, 0.3)), 0.5);
  const std::vector<int> y3 = {1, 0, 0, 0, 1, 0};
  EXPECT_NEAR(average_precision(y3, std::vector<double>(6, 0.0)), 1.0 / 3.0, 1e-15);
  EXPECT_THROW(average_precision(std::vector<int>{0, 0}, std::vector<double>{0.1, 0.2}),
               UndefinedMetricError);
  EXPECT_THROW(average_precision(std::vector<int>{0, 1}, std::vector<double>{0.1}), ConfigError);
}

TEST(AveragePrecision, MatchesThresholdSweep) {
  SplitMix64 g(3);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 2 + static_cast<int>(g.below(60));
    std::vector<int> y(n);
    std::vector<double> s(n);
    for (int i = 0; i < n; ++i) {
      y[i] = g.uniform() < 0.4 ? 1 : 0;
      // Coarse scores so that ties are common.
      s[i] = static_cast<double>(g.below(trial % 2 ? 5 : 1000)) / 4.0;
    }
    y[g.below(n)] = 1;
    EXPECT_NEAR(average_precision(y, s), threshold_ap(y, s), 1e-12) << trial;
  }
}

TEST(AveragePrecision, MonotoneTransformInvariant) {
  SplitMix64 g(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> y(40);
    std::vector<double> s(40), t(40);
    for (int i = 0; i < 40; ++i) {
      y[i] = g.uniform() < 0.3;
      s[i] = std::round(g.uniform() * 8) / 8;
      t[i] = std::exp(3 * s[i]) - 7.0;
    }
    y[0] = 1;
    EXPECT_EQ(average_precision(y, s), average_precision(y, t));
  }
}

TEST(MeanAp, PerfectAndPooledClasses) {
  const SegMask m(2, 2, 3, {0, 1, 1, 0});
  const OneHotMask y = one_hot(m);
  const ProbMap perfect(2, 2, 3, std::vector<double>(y.data().begin(), y.data().end()));
  EXPECT_EQ(map(y, perfect), 1.0);

  ApAccumulator acc(3);
  acc.add(y, perfect);
  const auto ap = acc.per_class_ap();
  EXPECT_EQ(*ap[0], 1.0);
  EXPECT_EQ(*ap[1], 1.0);
  EXPECT_FALSE(ap[2].has_value());
  EXPECT_EQ(acc.mean_ap(), 1.0);
  EXPECT_THROW(ApAccumulator(2).mean_ap(), UndefinedMetricError);
}

TEST(MeanAp, PoolingMatchesConcatenation) {
  SplitMix64 g(5);
  auto random_pair = [&](int w) {
    std::vector<int> lab(w);
    std::vector<double> z(w * 3);
    for (int& v : lab) v = static_cast<int>(g.below(3));
    for (double& v : z) v = g.normal();
    return std::pair{SegMask(w, 1, 3, lab), ProbMap::softmax(Tensor({1, std::size_t(w), 3}, z))};
  };
  const auto [m1, p1] = random_pair(10);
  const auto [m2, p2] = random_pair(7);
  ApAccumulator acc(3);
  acc.add(one_hot(m1), p1);
  acc.add(one_hot(m2), p2);
  std::vector<int> lab(m1.labels().begin(), m1.labels().end());
  lab.insert(lab.end(), m2.labels().begin(), m2.labels().end());
  std::vector<double> pd(p1.data().begin(), p1.data().end());
  pd.insert(pd.end(), p2.data().begin(), p2.data().end());
  const double joint = map(one_hot(SegMask(17, 1, 3, lab)), ProbMap(17, 1, 3, pd));
  EXPECT_DOUBLE_EQ(acc.mean_ap(), joint);
  EXPECT_GE(joint, 0.0);
  EXPECT_LE(joint, 1.0);
}
