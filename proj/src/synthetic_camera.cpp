#include "hsocc/synthetic_camera.hpp"

#include <cmath>

#include "hsocc/errors.hpp"

namespace hsocc::synth {

CameraRig forward_rig(int width, int height) {
  Mat34 tr = Mat34::Zero();
  tr(0, 1) = -1.0;  // camera x = -sensor y
  tr(1, 2) = -1.0;  // camera y = -sensor z
  tr(2, 0) = 1.0;   // camera z = sensor x
  const double f = width / 2.0;
  return CameraRig::pinhole(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height, tr);
}

RenderedView render(const SemanticGrid& scene, const CameraRig& rig, double max_depth) {
  rig.validate();
  scene.validate();
  RenderedView out;
  out.depth = DepthMap(rig.width, rig.height);
  out.classes.assign(static_cast<std::size_t>(rig.width) * rig.height, kFreeClass);
  const double step = scene.spec.voxel_size / 4.0;
  const int steps = static_cast<int>(std::ceil(max_depth / step));
  for (int v = 0; v < rig.height; ++v)
    for (int u = 0; u < rig.width; ++u)
      for (int s = 1; s <= steps; ++s) {
        const double d = s * step;
        const auto vox = voxel_of(scene.spec, rig.backproject(u, v, d));
        if (!vox) continue;
        const std::size_t i = scene.spec.linear_index((*vox)[0], (*vox)[1], (*vox)[2]);
        if (scene.valid[i] == 0 || scene.labels[i] == kFreeClass) continue;
        out.depth.at(u, v) = d;
        out.classes[static_cast<std::size_t>(v) * rig.width + u] = scene.labels[i];
        break;
      }
  return out;
}

FeatureEncoders make_feature_encoders(nn::ParamStore& store, std::size_t channels, std::size_t levels) {
  if (channels < 2 || channels % 2 != 0) throw ValidationError("feature channels must be even");
  return {nn::make_toy_encoder(store, "encoder.image", 2, channels / 2, levels),
          nn::make_toy_encoder(store, "encoder.depth", 1, channels / 2, levels)};
}

std::vector<nn::Tensor> encode_view(const RenderedView& view, const FeatureEncoders& enc, int num_classes,
                                    double max_depth) {
  const auto w = static_cast<std::size_t>(view.depth.width), h = static_cast<std::size_t>(view.depth.height);
  nn::Tensor image({2, h, w}), depth({1, h, w});
  for (std::size_t i = 0; i < w * h; ++i) {
    image[i] = static_cast<double>(view.classes[i]) / num_classes;
    image[w * h + i] = view.depth.depth[i] > 0.0 ? 1.0 : 0.0;
    depth[i] = view.depth.depth[i] / max_depth;
  }
  const auto fi = nn::toy_encoder_forward(enc.image, image);
  const auto fd = nn::toy_encoder_forward(enc.depth, depth);
  std::vector<nn::Tensor> out;
  for (std::size_t l = 0; l < fi.size(); ++l) out.push_back(nn::concat_channels(fi[l], fd[l]));
  return out;
}

}  // namespace hsocc::synth
