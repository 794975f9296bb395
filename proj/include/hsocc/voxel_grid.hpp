#pragma once

// Dense semantic voxel grids and the two-level multi-class label pyramid.
//
// Linear voxel index is x-major, z-fastest: idx = x*(Y*Z) + y*Z + z, which
// matches the SemanticKITTI devkit unpacking order.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace hsocc {

using Label = std::uint16_t;

inline constexpr Label kFreeClass = 0;

struct GridSpec {
  std::array<int, 3> dims{1, 1, 1};
  double voxel_size = 0.2;
  std::array<double, 3> origin{0.0, 0.0, 0.0};

  void validate() const;
  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
  std::array<double, 3> extent() const {
    return {dims[0] * voxel_size, dims[1] * voxel_size, dims[2] * voxel_size};
  }
  std::size_t linear_index(int x, int y, int z) const {
    return (static_cast<std::size_t>(x) * dims[1] + y) * dims[2] + z;
  }
  std::array<int, 3> coords(std::size_t idx) const {
    const int z = static_cast<int>(idx % dims[2]);
    const std::size_t xy = idx / dims[2];
    return {static_cast<int>(xy / dims[1]), static_cast<int>(xy % dims[1]), z};
  }
  bool contains(int x, int y, int z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < dims[0] && y < dims[1] && z < dims[2];
  }
  /// Same physical volume, dims divided by 2^levels, voxel size scaled up.
  /// Throws DimensionError when a dim is not divisible.
  GridSpec coarsened(int levels) const;
  /// Inverse of coarsened(1).
  GridSpec refined() const;

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

/// The SemanticKITTI volume: 256x256x32 voxels of 0.2 m, origin (0, -25.6, -2).
GridSpec semantic_kitti_spec();

struct SemanticGrid {
  GridSpec spec;
  int num_classes = 20;
  std::vector<Label> labels;
  std::vector<std::uint8_t> valid;

  SemanticGrid() = default;
  /// All voxels free and valid.
  SemanticGrid(const GridSpec& spec, int num_classes);

  void validate() const;
  std::size_t size() const { return labels.size(); }
  Label at(int x, int y, int z) const { return labels[spec.linear_index(x, y, z)]; }
  bool is_valid(int x, int y, int z) const { return valid[spec.linear_index(x, y, z)] != 0; }

  friend bool operator==(const SemanticGrid&, const SemanticGrid&) = default;
};

/// Per-low-voxel class fractions p_{i,c}: count of each class among the valid
/// children, normalized. Row i occupies fractions[i*num_classes ...].
struct ClassHistogramGrid {
  GridSpec spec;
  int level = 1;
  int num_classes = 0;
  std::vector<double> fractions;
  std::vector<std::uint8_t> defined;

  std::size_t size() const { return defined.size(); }
  std::span<const double> row(std::size_t i) const {
    return {fractions.data() + i * num_classes, static_cast<std::size_t>(num_classes)};
  }
};

struct SubdivisionMask {
  GridSpec spec;
  std::vector<std::uint8_t> requires_split;
  std::vector<std::uint8_t> defined;

  std::size_t size() const { return defined.size(); }
  std::size_t split_count() const;
  std::size_t defined_count() const;
};

struct StatsReport {
  int level = 0;
  std::array<int, 3> dims{};
  std::size_t total_voxels = 0;
  std::size_t total_defined = 0;
  std::size_t requires_split = 0;
  /// 1 - requires_split / total_defined
  double homogeneous_fraction = 1.0;
  /// 1 - requires_split / total_voxels (undefined voxels counted as homogeneous)
  double homogeneous_fraction_all = 1.0;
  /// Plurality class of each defined low voxel, tallied.
  std::vector<std::size_t> class_counts;
};

/// Levels 1..levels of the multi-class label pyramid, each computed directly
/// from the full-resolution grid with blocks of (2^l)^3 children.
std::vector<ClassHistogramGrid> build_histogram_pyramid(const SemanticGrid& grid, int levels);

SubdivisionMask subdivision_mask(const ClassHistogramGrid& hist);

std::vector<StatsReport> homogeneity_stats(const SemanticGrid& grid, int levels);

/// Plurality vote over valid children, ties toward the smaller class ID.
/// Low voxels without valid children are marked invalid with label 0.
SemanticGrid majority_downsample(const SemanticGrid& grid, int levels);

/// Nearest-neighbour expansion by 2^levels along every axis.
SemanticGrid nearest_upsample(const SemanticGrid& grid, int levels);

/// Desk-scale scene: a ground plane plus box objects laid out on the level-1
/// block lattice, then exactly round(planted_heterogeneity * #blocks) blocks
/// are made multi-class. All voxels valid. Deterministic in seed.
SemanticGrid generate_synthetic_scene(const GridSpec& spec, int num_classes,
                                      double planted_heterogeneity, std::uint64_t seed);

}  // namespace hsocc
