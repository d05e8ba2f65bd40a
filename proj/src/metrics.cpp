#include "s3d/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "s3d/error.hpp"

namespace s3d {

std::int64_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.num_classes != num_classes) throw ConfigError("confusion matrices differ in class count");
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
  return *this;
}

ConfusionMatrix confusion(const SegMask& truth, const SegMask& pred) {
  if (truth.width() != pred.width() || truth.height() != pred.height() ||
      truth.num_classes() != pred.num_classes()) {
    throw ConfigError("confusion: masks differ in size or class count");
  }
  ConfusionMatrix cm(truth.num_classes());
  const auto t = truth.labels();
  const auto p = pred.labels();
  for (std::size_t i = 0; i < t.size(); ++i) {
    ++cm.counts[static_cast<std::size_t>(t[i]) * cm.num_classes + p[i]];
  }
  return cm;
}

std::vector<std::optional<double>> per_class_iou(const ConfusionMatrix& cm) {
  const int c = cm.num_classes;
  std::vector<std::optional<double>> out(c);
  for (int k = 0; k < c; ++k) {
    std::int64_t row = 0, col = 0;
    for (int j = 0; j < c; ++j) {
      row += cm.at(k, j);
      col += cm.at(j, k);
    }
    const std::int64_t tp = cm.at(k, k);
    const std::int64_t denom = row + col - tp;
    if (denom > 0) out[k] = static_cast<double>(tp) / static_cast<double>(denom);
  }
  return out;
}

double miou(const ConfusionMatrix& cm) {
  double sum = 0.0;
  int n = 0;
  for (const auto& v : per_class_iou(cm)) {
    if (v) {
      sum += *v;
      ++n;
    }
  }
  if (n == 0) throw UndefinedMetricError("mIoU undefined: every class is empty");
  return sum / n;
}

double average_precision(std::span<const int> positives, std::span<const double> scores) {
  if (positives.size() != scores.size()) throw ConfigError("average_precision: size mismatch");
  const auto total_pos = std::count_if(positives.begin(), positives.end(), [](int v) { return v != 0; });
  if (total_pos == 0) throw UndefinedMetricError("average precision undefined without positives");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double ap = 0.0;
  std::int64_t seen = 0, hits = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    std::int64_t block_hits = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      block_hits += positives[order[j]] != 0;
      ++j;
    }
    seen += static_cast<std::int64_t>(j - i);
    hits += block_hits;
    if (block_hits > 0) ap += static_cast<double>(block_hits) * hits / static_cast<double>(seen);
    i = j;
  }
  return ap / static_cast<double>(total_pos);
}

ApAccumulator::ApAccumulator(int num_classes)
    : num_classes_(num_classes), labels_(num_classes), scores_(num_classes) {
  if (num_classes < 2) throw ConfigError("ApAccumulator needs at least two classes");
}

void ApAccumulator::add(const OneHotMask& truth, const ProbMap& pred) {
  if (truth.num_classes() != num_classes_ || pred.num_classes() != num_classes_ ||
      truth.width() != pred.width() || truth.height() != pred.height()) {
    throw ConfigError("mAP: truth and prediction differ in size or class count");
  }
  for (std::size_t px = 0; px < truth.pixel_count(); ++px) {
    for (int c = 0; c < num_classes_; ++c) {
      labels_[c].push_back(truth.at(px, c) > 0.5 ? 1 : 0);
      scores_[c].push_back(pred.at(px, c));
    }
  }
}

std::vector<std::optional<double>> ApAccumulator::per_class_ap() const {
  std::vector<std::optional<double>> out(num_classes_);
  for (int c = 0; c < num_classes_; ++c) {
    if (std::find(labels_[c].begin(), labels_[c].end(), 1) == labels_[c].end()) continue;
    out[c] = average_precision(labels_[c], scores_[c]);
  }
  return out;
}

double ApAccumulator::mean_ap() const {
  double sum = 0.0;
  int n = 0;
  for (const auto& v : per_class_ap()) {
    if (v) {
      sum += *v;
      ++n;
    }
  }
  if (n == 0) throw UndefinedMetricError("mAP undefined: no class has a positive pixel");
  return sum / n;
}

double map(const OneHotMask& truth, const ProbMap& pred) {
  ApAccumulator acc(truth.num_classes());
  acc.add(truth, pred);
  return acc.mean_ap();
}

}  // namespace s3d
