#pragma once

// Semantic scene completion metrics over valid ground-truth voxels.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hsocc/voxel_grid.hpp"

namespace hsocc::metrics {

/// Rows are ground truth, columns prediction.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int num_classes);

  int num_classes() const { return n_; }
  std::uint64_t at(int gt, int pred) const { return counts_[static_cast<std::size_t>(gt) * n_ + pred]; }
  void add(int gt, int pred, std::uint64_t count = 1);
  std::uint64_t total() const;

  /// Counts every voxel with gt.valid set. Throws on spec or class-count mismatch
  /// and on labels outside [0, num_classes).
  void accumulate(const SemanticGrid& pred, const SemanticGrid& gt);

  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  friend ConfusionMatrix operator+(ConfusionMatrix a, const ConfusionMatrix& b) { return a += b; }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  int n_ = 0;
  std::vector<std::uint64_t> counts_;
};

ConfusionMatrix accumulate(const SemanticGrid& pred, const SemanticGrid& gt);

struct SscMetrics {
  /// Occupied (class != 0) versus free.
  double iou_occupancy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  /// Semantic classes 1..C-1; empty when the class is absent from both GT and prediction.
  std::vector<std::optional<double>> per_class_iou;
  /// Mean over classes with a value.
  double miou = 0.0;
  std::uint64_t voxels = 0;
};

/// Throws ValidationError for an empty matrix.
SscMetrics ssc_metrics(const ConfusionMatrix& cm);

/// Machine-readable report; class_names optional (indices used otherwise).
std::string to_json(const SscMetrics& m, const std::vector<std::string>& class_names = {});
/// Aligned-text table: one header row of class names, one row of percentages.
std::string to_table(const SscMetrics& m, const std::vector<std::string>& class_names = {});

}  // namespace hsocc::metrics
