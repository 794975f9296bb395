#pragma once

// Readers and writers for SemanticKITTI-style files.
//
//   .bin / .invalid / .occluded   X*Y*Z/8 bytes, one bit per voxel, MSB first
//   .label                        X*Y*Z little-endian u16 raw labels
//   calib.txt                     "KEY: 12 floats" per line (P2 and Tr used)
//   velodyne .bin                 4 x float32 LE (x, y, z, intensity) per point
//   depth .png                    16-bit grayscale, meters = value / 256
//   remap .json                   raw-label -> train-ID table

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hsocc/geometry.hpp"
#include "hsocc/voxel_grid.hpp"

namespace hsocc {

struct OccupancyGrid {
  GridSpec spec;
  std::vector<std::uint8_t> occupied;

  friend bool operator==(const OccupancyGrid&, const OccupancyGrid&) = default;
};

class RemapTable {
 public:
  static constexpr std::int32_t kInvalid = -1;
  static constexpr std::int32_t kUnmapped = -2;

  RemapTable() = default;
  explicit RemapTable(int num_classes);

  /// raw -> raw for raw < num_classes; invalid_raw -> INVALID.
  static RemapTable identity(int num_classes, std::uint16_t invalid_raw = 255);

  /// {"num_classes": N, "learning_map": {"<raw>": id, ...}, "invalid": [raw, ...],
  ///  "class_names": [...]}. Mapping a raw label to -1 also marks it invalid.
  static RemapTable from_json(std::string_view text);
  static RemapTable load(const std::filesystem::path& path);

  void set(std::uint16_t raw, std::int32_t train_id);
  std::int32_t lookup(std::uint16_t raw) const { return table_[raw]; }
  int num_classes() const { return num_classes_; }
  const std::vector<std::string>& class_names() const { return class_names_; }

 private:
  int num_classes_ = 0;
  std::vector<std::int32_t> table_ = std::vector<std::int32_t>(65536, kUnmapped);
  std::vector<std::string> class_names_;
};

/// SemanticKITTI class names in train-ID order (20 entries).
const std::vector<std::string>& semantic_kitti_class_names();

OccupancyGrid read_packed_bitgrid(std::span<const std::uint8_t> bytes, const GridSpec& spec);
std::vector<std::uint8_t> write_packed_bitgrid(const OccupancyGrid& grid);

SemanticGrid read_label_grid(std::span<const std::uint8_t> bytes, const GridSpec& spec, const RemapTable& remap);
/// Writes train IDs; invalid voxels are written as invalid_raw.
std::vector<std::uint8_t> write_label_grid(const SemanticGrid& grid, std::uint16_t invalid_raw = 255);

/// Marks voxels set in the mask invalid.
void apply_invalid_mask(SemanticGrid& grid, const OccupancyGrid& invalid);

/// Occupancy (label != free) of the valid voxels.
OccupancyGrid occupancy_of(const SemanticGrid& grid);

struct Calibration {
  Mat34 p2 = Mat34::Zero();
  Mat34 tr = Mat34::Identity();
};

Calibration parse_calibration(std::string_view text);

/// Rig from calib.txt text. KITTI calib files carry no image size, so it is
/// supplied by the caller.
CameraRig read_calibration(std::string_view text, int image_width = 1226, int image_height = 370);

DepthMap read_depth_map(std::span<const std::uint8_t> png_bytes);
std::vector<std::uint8_t> write_depth_map(const DepthMap& depth);

PointCloud read_lidar_points(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> write_lidar_points(const PointCloud& cloud);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace hsocc
