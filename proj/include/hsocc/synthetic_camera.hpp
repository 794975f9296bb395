#pragma once

// Renders a synthetic voxel scene from a forward-looking camera so the
// demo pipeline has a depth map, a class image and 2D features to consume.

#include <cstdint>
#include <vector>

#include "hsocc/geometry.hpp"
#include "hsocc/mini_nn.hpp"
#include "hsocc/voxel_grid.hpp"

namespace hsocc::synth {

/// Camera at the sensor origin looking along sensor +x, image y pointing
/// down (sensor -z), horizontal field of view 90 degrees.
CameraRig forward_rig(int width = 64, int height = 32);

struct RenderedView {
  DepthMap depth;
  /// Class of the first occupied voxel per pixel, 0 where the ray escapes.
  std::vector<Label> classes;
};

/// Marches every pixel ray in steps of voxel_size / 4 up to max_depth
/// (camera z) and stops at the first valid voxel with a non-free label.
RenderedView render(const SemanticGrid& scene, const CameraRig& rig, double max_depth = 30.0);

struct FeatureEncoders {
  nn::ToyEncoder image;  // 2 -> C/2
  nn::ToyEncoder depth;  // 1 -> C/2
};

FeatureEncoders make_feature_encoders(nn::ParamStore& store, std::size_t channels, std::size_t levels);

/// F2D levels [C][H_l][W_l]: image features with depth-context features
/// appended along channels. Image input channels are class / num_classes
/// and a hit indicator; the depth input is depth / max_depth.
std::vector<nn::Tensor> encode_view(const RenderedView& view, const FeatureEncoders& enc, int num_classes,
                                    double max_depth = 30.0);

}  // namespace hsocc::synth
