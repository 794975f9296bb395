#include "hsocc/geometry.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>

#include "hsocc/errors.hpp"

namespace hsocc {

void CameraRig::validate() const {
  if (width <= 0 || height <= 0) throw ValidationError("camera image size must be positive");
  if (!(projection(0, 0) > 0.0) || !(projection(1, 1) > 0.0))
    throw ValidationError("camera projection needs positive focal terms");
  const Eigen::Matrix3d r = sensor_to_camera.leftCols<3>();
  const double err = (r * r.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (!(err <= 1e-6)) throw ValidationError("sensor_to_camera rotation is not orthonormal");
  if (!projection.allFinite() || !sensor_to_camera.allFinite())
    throw ValidationError("camera matrices must be finite");
}

Eigen::Vector3d CameraRig::to_camera(const Eigen::Vector3d& p) const {
  return sensor_to_camera.leftCols<3>() * p + sensor_to_camera.col(3);
}

CameraRig::Projection CameraRig::project(const Eigen::Vector3d& sensor_point) const {
  const Eigen::Vector3d c = to_camera(sensor_point);
  const Eigen::Vector3d h = projection.leftCols<3>() * c + projection.col(3);
  return {h.x() / h.z(), h.y() / h.z(), h.z()};
}

Eigen::Vector3d CameraRig::backproject(double u, double v, double depth) const {
  const Eigen::Vector3d h(u * depth, v * depth, depth);
  const Eigen::Vector3d c = projection.leftCols<3>().partialPivLu().solve(h - projection.col(3));
  const Eigen::Matrix3d r = sensor_to_camera.leftCols<3>();
  return r.transpose() * (c - sensor_to_camera.col(3));
}

std::optional<std::pair<int, int>> CameraRig::pixel_of(double u, double v) const {
  if (!std::isfinite(u) || !std::isfinite(v)) return std::nullopt;
  const double pu = std::floor(u + 0.5);
  const double pv = std::floor(v + 0.5);
  if (pu < 0.0 || pv < 0.0 || pu >= width || pv >= height) return std::nullopt;
  return std::pair<int, int>{static_cast<int>(pu), static_cast<int>(pv)};
}

CameraRig CameraRig::pinhole(double fx, double fy, double cx, double cy, int width, int height,
                             const Mat34& sensor_to_camera) {
  CameraRig rig;
  rig.projection << fx, 0, cx, 0, 0, fy, cy, 0, 0, 0, 1, 0;
  rig.sensor_to_camera = sensor_to_camera;
  rig.width = width;
  rig.height = height;
  return rig;
}

std::size_t DepthMap::valid_count() const {
  return static_cast<std::size_t>(std::count_if(depth.begin(), depth.end(), [](double d) { return d > 0.0; }));
}

std::size_t VoxelProposalSet::proposal_count() const {
  return static_cast<std::size_t>(std::count(proposal.begin(), proposal.end(), 1));
}

std::size_t ReferencePointMap::fov_count() const {
  return static_cast<std::size_t>(std::count(fov.begin(), fov.end(), 1));
}

std::vector<double> uniform_depth_bins(double d_min, double d_max, int n) {
  if (n < 1) throw ValidationError("need at least one depth bin");
  if (!(d_max >= d_min)) throw ValidationError("depth bin range is inverted");
  std::vector<double> bins(n);
  for (int i = 0; i < n; ++i) bins[i] = n == 1 ? d_min : d_min + (d_max - d_min) * i / (n - 1);
  return bins;
}

std::optional<std::array<int, 3>> voxel_of(const GridSpec& spec, const Eigen::Vector3d& p) {
  std::array<int, 3> idx{};
  for (int a = 0; a < 3; ++a) {
    const double f = std::floor((p[a] - spec.origin[a]) / spec.voxel_size);
    if (!(f >= 0.0) || f >= spec.dims[a]) return std::nullopt;
    idx[a] = static_cast<int>(f);
  }
  return idx;
}

Eigen::Vector3d voxel_center(const GridSpec& spec, int x, int y, int z) {
  return {spec.origin[0] + (x + 0.5) * spec.voxel_size, spec.origin[1] + (y + 0.5) * spec.voxel_size,
          spec.origin[2] + (z + 0.5) * spec.voxel_size};
}

VoxelProposalSet backproject_depth_to_voxels(const DepthMap& depth, const CameraRig& rig, const GridSpec& spec,
                                             int dilation) {
  rig.validate();
  spec.validate();
  if (depth.width != rig.width || depth.height != rig.height)
    throw ShapeError("depth map size does not match the camera rig");
  if (dilation < 0) throw ValidationError("dilation radius must be >= 0");
  VoxelProposalSet out;
  out.spec = spec;
  out.proposal.assign(spec.voxel_count(), 0);
  out.hits.assign(spec.voxel_count(), 0);
  for (int v = 0; v < depth.height; ++v)
    for (int u = 0; u < depth.width; ++u) {
      const double d = depth.at(u, v);
      if (!(d > 0.0)) continue;
      if (const auto vox = voxel_of(spec, rig.backproject(u, v, d))) {
        const std::size_t i = spec.linear_index((*vox)[0], (*vox)[1], (*vox)[2]);
        ++out.hits[i];
        out.proposal[i] = 1;
      }
    }
  if (dilation > 0) {
    const std::vector<std::uint32_t> hits = out.hits;
    for (std::size_t i = 0; i < hits.size(); ++i) {
      if (hits[i] == 0) continue;
      const auto [x, y, z] = spec.coords(i);
      for (int dx = -dilation; dx <= dilation; ++dx)
        for (int dy = -dilation; dy <= dilation; ++dy)
          for (int dz = -dilation; dz <= dilation; ++dz)
            if (spec.contains(x + dx, y + dy, z + dz)) out.proposal[spec.linear_index(x + dx, y + dy, z + dz)] = 1;
    }
  }
  return out;
}

ReferencePointMap project_voxel_centers(const GridSpec& spec, const CameraRig& rig) {
  rig.validate();
  spec.validate();
  ReferencePointMap out;
  out.spec = spec;
  out.uv.assign(2 * spec.voxel_count(), 0.0);
  out.fov.assign(spec.voxel_count(), 0);
  for (std::size_t i = 0; i < spec.voxel_count(); ++i) {
    const auto [x, y, z] = spec.coords(i);
    const auto p = rig.project(voxel_center(spec, x, y, z));
    if (!(p.depth > 0.0) || !rig.pixel_of(p.u, p.v)) continue;
    out.fov[i] = 1;
    out.uv[2 * i] = std::clamp((p.u + 0.5) / rig.width, 0.0, 1.0);
    out.uv[2 * i + 1] = std::clamp((p.v + 0.5) / rig.height, 0.0, 1.0);
  }
  return out;
}

std::vector<PixelLabel> project_points_to_image(const PointCloud& cloud, const CameraRig& rig,
                                                const std::vector<Label>* point_labels) {
  rig.validate();
  if (point_labels != nullptr && point_labels->size() != cloud.points.size())
    throw ShapeError("point label count does not match the cloud");
  std::map<std::pair<int, int>, PixelLabel> nearest;  // keyed (v, u)
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const auto& pt = cloud.points[i];
    const auto p = rig.project(Eigen::Vector3d(pt.x, pt.y, pt.z));
    if (!(p.depth > 0.0)) continue;
    const auto pix = rig.pixel_of(p.u, p.v);
    if (!pix) continue;
    PixelLabel lab{pix->first, pix->second, p.depth, std::nullopt};
    if (point_labels != nullptr) lab.label = (*point_labels)[i];
    const auto key = std::pair{pix->second, pix->first};
    auto it = nearest.find(key);
    if (it == nearest.end())
      nearest.emplace(key, lab);
    else if (lab.depth < it->second.depth)
      it->second = lab;
  }
  std::vector<PixelLabel> out;
  out.reserve(nearest.size());
  for (auto& [key, lab] : nearest) out.push_back(lab);
  return out;
}

DepthMap rasterize(const std::vector<PixelLabel>& labels, int width, int height) {
  DepthMap map(width, height);
  for (const auto& l : labels)
    if (l.u >= 0 && l.v >= 0 && l.u < width && l.v < height) map.at(l.u, l.v) = l.depth;
  return map;
}

DepthMap expected_depth(const DepthDistribution& dist) {
  const std::size_t pixels = static_cast<std::size_t>(dist.width) * dist.height;
  const std::size_t bins = dist.bins();
  if (bins == 0) throw ShapeError("depth distribution has no bins");
  if (dist.weights.size() != bins * pixels) throw ShapeError("depth distribution weights have the wrong size");
  DepthMap out(dist.width, dist.height);
  for (std::size_t p = 0; p < pixels; ++p) {
    double sum = 0.0;
    double expect = 0.0;
    for (std::size_t b = 0; b < bins; ++b) {
      const double w = dist.weights[b * pixels + p];
      if (!(w >= 0.0)) throw ValidationError("negative depth weight at pixel " + std::to_string(p));
      sum += w;
      expect += w * dist.bin_depths[b];
    }
    if (std::abs(sum - 1.0) > 1e-4) throw ValidationError("unnormalized depth distribution at pixel " + std::to_string(p));
    out.depth[p] = expect;
  }
  return out;
}

}  // namespace hsocc
