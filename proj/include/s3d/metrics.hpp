#pragma once

// Segmentation metrics: confusion matrix, mIoU and pixelwise mAP.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "s3d/imagery.hpp"

namespace s3d {

struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<std::int64_t> counts;  // [truth][pred]

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int c)
      : num_classes(c), counts(static_cast<std::size_t>(c) * c, 0) {}

  std::int64_t at(int truth, int pred) const {
    return counts[static_cast<std::size_t>(truth) * num_classes + pred];
  }
  std::int64_t total() const;
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

ConfusionMatrix confusion(const SegMask& truth, const SegMask& pred);

// nullopt for classes absent from both truth and prediction.
std::vector<std::optional<double>> per_class_iou(const ConfusionMatrix& cm);
// Mean over non-empty classes; UndefinedMetricError when all are empty.
double miou(const ConfusionMatrix& cm);

// Pixels ranked by descending score, ties by index. Precision is read at
// the end of each block of equal scores, so tied pixels share one
// operating point. UndefinedMetricError without positives.
double average_precision(std::span<const int> positives, std::span<const double> scores);

// Pools pixels across images, one ranking per class.
class ApAccumulator {
 public:
  explicit ApAccumulator(int num_classes);
  void add(const OneHotMask& truth, const ProbMap& pred);
  std::vector<std::optional<double>> per_class_ap() const;  // nullopt: no positives
  double mean_ap() const;

 private:
  int num_classes_;
  std::vector<std::vector<int>> labels_;
  std::vector<std::vector<double>> scores_;
};

double map(const OneHotMask& truth, const ProbMap& pred);

}  // namespace s3d
