#pragma once

// Hierarchical supervision: pick the K low-resolution voxels most likely to
// need subdivision, split each into its 8 children, supervise the children
// at full resolution, and merge low and high predictions.
//
// Child octant o of a parent at (x, y, z) is the full-resolution voxel
// (2x + dx, 2y + dy, 2z + dz) with o = dx << 2 | dy << 1 | dz.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hsocc/losses.hpp"
#include "hsocc/mini_nn.hpp"
#include "hsocc/voxel_grid.hpp"

namespace hsocc::hss {

inline constexpr std::size_t kDefaultTopK = 15000;

inline constexpr std::array<int, 3> octant_offset(unsigned o) {
  return {static_cast<int>((o >> 2) & 1u), static_cast<int>((o >> 1) & 1u), static_cast<int>(o & 1u)};
}

struct SelectionSet {
  /// Low-resolution linear indices, sorted by score descending, ties by index.
  std::vector<std::size_t> indices;
  std::vector<double> scores;

  std::size_t k() const { return indices.size(); }
};

std::string to_json(const SelectionSet& s);
SelectionSet selection_from_json(const std::string& text);

/// The K candidates (mask set) with the largest scores; ties by ascending index.
/// Throws ValidationError if K exceeds the candidate count or a score is NaN.
SelectionSet select_topk(std::span<const double> scores, std::size_t k, std::span<const std::uint8_t> candidates);

/// Shannon entropy (nats) of softmax(logits) per voxel.
std::vector<double> entropy_scores(const losses::VoxelMatrix& logits);

/// Every requires_split parent, score 1; the oracle selection.
SelectionSet select_split_parents(const SubdivisionMask& mask);

struct SplitHeads {
  /// C -> C -> 1, sigmoid output: per-voxel split probability.
  nn::Mlp score;
  /// C -> 4C -> 8C: child features, reshaped [8][C] in octant order.
  nn::Mlp feature;
};

SplitHeads make_split_heads(nn::ParamStore& store, const std::string& name, std::size_t channels);

/// Split probabilities for [n][C] low-resolution features.
std::vector<double> learned_split_scores(const nn::Tensor& low_feats, const nn::Mlp& score_head);

struct HighVoxelFeatures {
  /// [8K][C], parent-major then octant.
  nn::Tensor features;
  std::vector<std::size_t> parent;
  std::vector<std::uint8_t> octant;
};

/// low_feats [n_low][C]; split_head maps C -> 8C.
HighVoxelFeatures subdivide_selected(const nn::Tensor& low_feats, const SelectionSet& selection,
                                     const nn::Mlp& split_head);

struct ChildLabels {
  std::vector<Label> labels;
  std::vector<std::uint8_t> valid;
};

/// Full-resolution labels of the 8 children of every selected parent.
ChildLabels gather_child_labels(const SemanticGrid& full, const SelectionSet& selection);

/// Full-resolution prediction: children of selected parents take the argmax
/// of their high-level logits, every other voxel the argmax of its parent's
/// low-level logits. Argmax ties go to the smaller class ID.
SemanticGrid recombine_predictions(const losses::VoxelMatrix& low_logits, const losses::VoxelMatrix& high_logits,
                                   const SelectionSet& selection, const GridSpec& low_spec);

/// |selected and requires_split| / |requires_split|, 1 when nothing requires a split.
double subdivision_recall(const SelectionSet& selection, const SubdivisionMask& gt);

/// Analytic cost of supervising at full resolution versus the hierarchical
/// path, counted in voxel feature vectors.
struct SupervisionCost {
  std::size_t dense_voxels = 0;
  std::size_t low_voxels = 0;
  std::size_t high_voxels = 0;
  std::size_t hierarchical_voxels = 0;
  /// hierarchical_voxels / dense_voxels
  double memory_touch_ratio = 0.0;
  std::size_t dense_bytes = 0;
  std::size_t hierarchical_bytes = 0;
  double dense_flops = 0.0;
  double hierarchical_flops = 0.0;
};

/// full_spec is the target (ground-truth) resolution; the low level is one
/// pyramid step coarser. Bytes assume float32 features of `channels` width;
/// FLOPs count the semantic heads, the dense trilinear upsampling of the
/// dense path, and the split MLPs of the hierarchical path.
SupervisionCost supervision_cost(std::size_t k, const GridSpec& full_spec, std::size_t channels, std::size_t classes);

}  // namespace hsocc::hss
