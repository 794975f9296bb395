#pragma once

// Pinhole projections linking pixels, sensor-frame points and voxels.
//
// Pixel convention: pixel (u, v) has its center at integer coordinates, so a
// continuous projection lands in pixel (round(u), round(v)). Normalized image
// coordinates use the half-pixel convention (u + 0.5) / width, which is what
// the bilinear sampler in mini_nn expects.

#include <Eigen/Core>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "hsocc/voxel_grid.hpp"

namespace hsocc {

using Mat34 = Eigen::Matrix<double, 3, 4>;

struct CameraRig {
  /// 3x4 projection from camera frame to homogeneous pixels (KITTI P2).
  Mat34 projection = Mat34::Zero();
  /// 3x4 rigid transform from sensor (LiDAR / ego) frame to camera frame (KITTI Tr).
  Mat34 sensor_to_camera = Mat34::Identity();
  int width = 0;
  int height = 0;

  /// Positive focal terms, orthonormal rotation (1e-6), positive image size.
  void validate() const;

  Eigen::Vector3d to_camera(const Eigen::Vector3d& sensor_point) const;

  struct Projection {
    double u = 0.0;
    double v = 0.0;
    /// Third homogeneous coordinate; equals camera-frame z for a standard P.
    double depth = 0.0;
  };
  Projection project(const Eigen::Vector3d& sensor_point) const;

  /// Sensor-frame point whose projection is (u, v) at the given depth.
  Eigen::Vector3d backproject(double u, double v, double depth) const;

  /// Image pixel hit by the continuous coordinate, if inside the image.
  std::optional<std::pair<int, int>> pixel_of(double u, double v) const;

  static CameraRig pinhole(double fx, double fy, double cx, double cy, int width, int height,
                           const Mat34& sensor_to_camera = Mat34::Identity());
};

struct DepthMap {
  int width = 0;
  int height = 0;
  /// Row-major, meters, 0 = missing.
  std::vector<double> depth;

  DepthMap() = default;
  DepthMap(int w, int h) : width(w), height(h), depth(static_cast<std::size_t>(w) * h, 0.0) {}
  double at(int u, int v) const { return depth[static_cast<std::size_t>(v) * width + u]; }
  double& at(int u, int v) { return depth[static_cast<std::size_t>(v) * width + u]; }
  std::size_t valid_count() const;
};

struct LidarPoint {
  float x = 0, y = 0, z = 0, intensity = 0;
};

struct PointCloud {
  std::vector<LidarPoint> points;
};

struct VoxelProposalSet {
  GridSpec spec;
  std::vector<std::uint8_t> proposal;
  /// Number of depth pixels that landed in each voxel (before dilation).
  std::vector<std::uint32_t> hits;

  std::size_t proposal_count() const;
};

struct ReferencePointMap {
  GridSpec spec;
  /// Interleaved (u, v) per voxel, normalized to [0,1]; zero when fov is false.
  std::vector<double> uv;
  std::vector<std::uint8_t> fov;

  std::size_t fov_count() const;
};

/// Per-pixel categorical depth distribution; weights laid out [bin][row][col].
struct DepthDistribution {
  int width = 0;
  int height = 0;
  std::vector<double> bin_depths;
  std::vector<double> weights;

  std::size_t bins() const { return bin_depths.size(); }
};

inline constexpr int kDefaultDepthBins = 192;

/// n bin depths evenly spaced over [d_min, d_max], inclusive.
std::vector<double> uniform_depth_bins(double d_min, double d_max, int n = kDefaultDepthBins);

/// Voxel containing a sensor-frame point, if inside the grid.
std::optional<std::array<int, 3>> voxel_of(const GridSpec& spec, const Eigen::Vector3d& p);

Eigen::Vector3d voxel_center(const GridSpec& spec, int x, int y, int z);

/// Every pixel with positive depth marks the voxel containing its
/// back-projection. dilation > 0 also marks voxels within that Chebyshev
/// radius of a hit.
VoxelProposalSet backproject_depth_to_voxels(const DepthMap& depth, const CameraRig& rig,
                                             const GridSpec& spec, int dilation = 0);

ReferencePointMap project_voxel_centers(const GridSpec& spec, const CameraRig& rig);

struct PixelLabel {
  int u = 0;
  int v = 0;
  double depth = 0.0;
  std::optional<Label> label;
};

/// Sparse per-pixel depth (and optional class) labels, sorted by (v, u).
/// Colliding points keep the nearest depth.
std::vector<PixelLabel> project_points_to_image(const PointCloud& cloud, const CameraRig& rig,
                                                const std::vector<Label>* point_labels = nullptr);

/// Dense depth image from sparse labels (0 where no label).
DepthMap rasterize(const std::vector<PixelLabel>& labels, int width, int height);

/// D = sum_i P_i d_i per pixel. Throws ValidationError for a pixel whose
/// weights are negative or do not sum to 1 within 1e-4.
DepthMap expected_depth(const DepthDistribution& dist);

}  // namespace hsocc
