#pragma once

// Supervision losses with analytic gradients.
//
// The affinity losses (multiclass_scal, scal_onehot) take per-voxel class
// probabilities; cross-entropy takes logits; split_bce takes sigmoid outputs.
// Every gradient is with respect to that consumed input.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "hsocc/voxel_grid.hpp"

namespace hsocc::losses {

inline constexpr double kEps = 1e-7;

/// Row-major [voxel][class] view.
struct VoxelMatrix {
  std::span<const double> values;
  std::size_t voxels = 0;
  std::size_t classes = 0;

  VoxelMatrix() = default;
  VoxelMatrix(std::span<const double> v, std::size_t n, std::size_t c);
  double at(std::size_t i, std::size_t c) const { return values[i * classes + c]; }
  std::span<const double> row(std::size_t i) const { return values.subspan(i * classes, classes); }
};

struct LossResult {
  double value = 0.0;
  std::vector<double> grad;
  /// Number of (class, term) pairs, or voxels for per-voxel losses, included.
  std::size_t defined_terms = 0;
};

enum class ScalMode {
  /// One occupied channel: occupied = 1 - p(free).
  geometry,
  /// Semantic classes 1..C-1 (free excluded).
  semantic,
  /// Every class channel 0..C-1.
  all_classes,
};

/// Multi-class scene-class affinity loss. Per class c over included voxels,
/// with m_i = [p_ic > 0]:
///   P_c = log(sum p^_ic m_i / sum p^_ic)
///   R_c = -|log(sum p^_ic m_i / sum p_ic)|
///   S_c = log(sum (1-p^_ic)(1-m_i) / sum (1-m_i))
/// value = -(sum of included terms) / (#classes with an included term).
/// P_c and R_c are dropped when the class is absent from the labels
/// (sum p_ic = 0); P_c also when sum p^_ic = 0; S_c when every voxel is
/// positive. Log arguments are clamped at kEps (zero gradient when clamped).
/// `mask` (optional) selects the included voxels.
LossResult multiclass_scal(const VoxelMatrix& pred_probs, const VoxelMatrix& label_fractions, ScalMode mode,
                           std::span<const std::uint8_t> mask = {});

/// Same loss for hard class-ID labels, evaluated directly from the IDs.
LossResult scal_onehot(const VoxelMatrix& pred_probs, std::span<const Label> labels, ScalMode mode,
                       std::span<const std::uint8_t> mask = {});

/// Weighted softmax cross-entropy against hard targets:
///   sum_i w_{y_i} (-log q_{i,y_i}) / sum_i w_{y_i}
/// over voxels with mask set. Empty `weights` means unit weights.
LossResult weighted_ce(const VoxelMatrix& logits, std::span<const Label> targets, std::span<const double> weights,
                       std::span<const std::uint8_t> mask = {});

/// Soft-target variant:
///   sum_i sum_c w_c p_ic (-log q_ic) / sum_i sum_c w_c p_ic
LossResult weighted_ce(const VoxelMatrix& logits, const VoxelMatrix& target_fractions,
                       std::span<const double> weights, std::span<const std::uint8_t> mask = {});

/// Mean binary cross-entropy of split probabilities against requires_split,
/// over defined voxels. Scores clamped to [kEps, 1-kEps].
LossResult split_bce(std::span<const double> scores, const SubdivisionMask& mask);

/// Mean smooth-L1 (beta = 1) of pred - target over entries with mask set.
LossResult smooth_l1(std::span<const double> pred, std::span<const double> target,
                     std::span<const std::uint8_t> mask = {});

/// w_c = 1 / ln(1.02 + f_c), f_c the class frequency over the given counts.
std::vector<double> class_frequency_weights(std::span<const std::size_t> class_counts);

struct LossWeights {
  double lambda1 = 1.0;
  double lambda2 = 0.3;
  /// Per-class CE weights; empty means unit weights.
  std::vector<double> ce_weights;
  /// Use plurality (hard) targets for the low-level CE instead of fractions.
  bool hard_low_targets = false;
};

struct TotalLossInputs {
  /// [low voxel][class]
  VoxelMatrix low_logits;
  /// [8K child][class], rows ordered parent-major then octant
  VoxelMatrix high_logits;
  /// [low voxel] split probabilities
  std::span<const double> split_scores;
  const ClassHistogramGrid* low_labels = nullptr;
  const SubdivisionMask* split_mask = nullptr;
  /// [8K] full-resolution child labels and validity
  std::span<const Label> child_labels;
  std::span<const std::uint8_t> child_valid;
};

struct TotalLoss {
  double low = 0.0;
  double high = 0.0;
  double bce = 0.0;
  double total = 0.0;

  double low_ce = 0.0;
  double low_mc_geo = 0.0;
  double high_ce = 0.0;
  double high_scal_geo = 0.0;
  double high_scal_sem = 0.0;

  std::vector<double> grad_low_logits;
  std::vector<double> grad_high_logits;
  std::vector<double> grad_split_scores;
};

/// L = L_high + L_low + L_bce with
///   L_low  = lambda1 * CE(low, fractions) + lambda2 * L_mc^geo(softmax(low), fractions)
///   L_high = CE(high, child IDs) + L_scal^geo + L_scal^sem   (one-hot child labels)
///   L_bce  = split_bce(split_scores, split_mask)
/// L_high is zero when no valid child is selected.
TotalLoss total_loss(const TotalLossInputs& in, const LossWeights& weights);

/// Row-wise softmax of [n][c] logits.
std::vector<double> softmax_rows(const VoxelMatrix& logits);

/// Pulls a gradient w.r.t. softmax(logits) back to the logits.
std::vector<double> softmax_backward(const VoxelMatrix& logits, std::span<const double> grad_probs);

}  // namespace hsocc::losses
