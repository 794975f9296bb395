#pragma once

// Global query decoder at toy scale. Voxel features q_vox live as
// [C][X][Y][Z]; global queries q_g as [N_q][C]. One iteration is
//   query-image cross-attention   q_g   <- deformable attention over F2D
//   scene-query cross-attention   q_vox <- in-FOV voxels attend to q_g
//   global query module           3D UNet over q_vox, q_g attends to the
//                                 lowest UNet scale
//   query self-attention          q_g   <- self-attention + FFN
// Attention blocks are pre-norm residual.

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "hsocc/geometry.hpp"
#include "hsocc/mini_nn.hpp"
#include "hsocc/tensor.hpp"
#include "hsocc/voxel_grid.hpp"

namespace hsocc::decoder {

using nn::Tensor;

struct DecoderConfig {
  std::size_t channels = 32;
  std::size_t num_queries = 128;
  std::size_t iterations = 3;
  /// UNet scale count S, including the input resolution.
  std::size_t unet_scales = 2;
  /// Number of 2D feature levels in F2D.
  std::size_t image_levels = 2;
  std::size_t heads = 4;
  std::size_t points = 4;
  std::size_t ffn_multiplier = 2;

  void validate() const;
  /// Also checks that every dim is divisible by 2^(S-1).
  void validate_grid(const std::array<int, 3>& dims) const;
  /// UNet channel width at scale s: C * 2^s, capped at 4C.
  std::size_t unet_channels(std::size_t s) const;

  /// C=16, N_q=8, N_iter=2.
  static DecoderConfig toy();
};

struct Norm {
  Tensor gain;
  Tensor bias;
};

struct DecoderParams {
  Tensor mask_embedding;  // [C]
  nn::Linear voxel_pos;   // 3 -> C, query of the initialization deformable attention
  nn::DeformableAttention init_attn;

  Tensor query_embed;  // [N_q][C]
  Tensor query_refs;   // [N_q][2], pre-sigmoid
  Norm qi_norm;
  nn::DeformableAttention qi_attn;

  Norm sq_norm;
  Norm sq_kv_norm;
  nn::MultiHeadAttention sq_attn;

  std::vector<nn::Conv3d> unet_down;  // S convs: stride 1 at scale 0, stride 2 after
  std::vector<nn::Conv3d> unet_up;    // S-1 convs, unet_up[s-1] produces scale s-1
  Norm gq_norm;
  Norm gq_kv_norm;
  nn::MultiHeadAttention gq_attn;

  Norm sa_norm;
  nn::MultiHeadAttention sa_attn;
  Norm ffn_norm;
  nn::Mlp ffn;
};

/// Registers every decoder parameter in `store` under the "decoder." prefix.
DecoderParams make_decoder_params(nn::ParamStore& store, const DecoderConfig& cfg);
/// Rebinds parameters previously registered (e.g. a loaded snapshot); shapes checked.
DecoderParams bind_decoder_params(const nn::ParamStore& store, const DecoderConfig& cfg);

struct DecoderInputs {
  VoxelProposalSet proposals;
  ReferencePointMap refpts;
  /// F2D levels, each [C][H_l][W_l], depth context already appended.
  std::vector<Tensor> features;
};

struct SceneState {
  GridSpec spec;
  Tensor q_vox;  // [C][X][Y][Z]
  Tensor q_g;    // [N_q][C]
  std::vector<std::uint8_t> fov;
  std::vector<std::uint8_t> proposal;
  /// [n_voxels][2] normalized image coordinates of voxel centers.
  Tensor refs;

  void validate() const;
};

/// In-FOV proposal voxels take the deformable aggregate of F2D at their
/// reference points; every other voxel takes the mask embedding.
SceneState init_voxel_features(const DecoderInputs& in, const DecoderParams& p,
                               const nn::AttentionObserver& observer = {});
SceneState query_image_ca(const SceneState& s, const std::vector<Tensor>& features, const DecoderParams& p,
                          const nn::AttentionObserver& observer = {});
SceneState scene_query_ca(const SceneState& s, const DecoderParams& p, const nn::AttentionObserver& observer = {});
SceneState gq_module(const SceneState& s, const DecoderParams& p, const nn::AttentionObserver& observer = {});
SceneState query_self_attention(const SceneState& s, const DecoderParams& p,
                                const nn::AttentionObserver& observer = {});

struct DecoderRun {
  SceneState initial;
  SceneState final_state;
  /// q_low: final q_vox, [C][X][Y][Z].
  const Tensor& q_low() const { return final_state.q_vox; }
};

DecoderRun run_decoder(const DecoderInputs& in, const DecoderParams& p, const DecoderConfig& cfg,
                       const nn::AttentionObserver& observer = {});

}  // namespace hsocc::decoder
