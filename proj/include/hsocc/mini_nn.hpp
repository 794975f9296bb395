#pragma once

// Forward-only neural building blocks on Tensor. Layouts:
//   dense activations   [rows][channels]
//   2D feature maps     [C][H][W]
//   voxel volumes       [C][X][Y][Z]

#include <array>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hsocc/tensor.hpp"

namespace hsocc::nn {

enum class Activation { identity, relu, sigmoid };

double activate(Activation a, double x);

struct Linear {
  Tensor weight;  // [out][in]
  Tensor bias;    // [out]

  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }
};

/// weight uniform(+-1/sqrt(in)), bias zero. Registered as <name>.weight / <name>.bias.
Linear make_linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out);
/// Rebinds a Linear from tensors already in the store.
Linear bind_linear(const ParamStore& store, const std::string& name);

/// x [n][in] -> [n][out]
Tensor linear_forward(const Tensor& x, const Linear& layer);

struct Mlp {
  std::vector<Linear> layers;
  Activation hidden = Activation::relu;
  Activation output = Activation::identity;
};

Mlp make_mlp(ParamStore& store, const std::string& name, const std::vector<std::size_t>& widths,
             Activation hidden = Activation::relu, Activation output = Activation::identity);

/// Affine + activation per layer (`hidden` between layers, `output` last).
Tensor mlp_forward(const Tensor& x, const Mlp& mlp);

/// Receives every attention weight tensor produced; rows of the last axis
/// are the normalized distributions.
using AttentionObserver = std::function<void(std::string_view site, const Tensor& weights)>;

struct AttentionResult {
  Tensor output;   // [nq][dv]
  Tensor weights;  // [nq][nk]
};

/// softmax(Q K^T / sqrt(d)) V. key_mask is empty, [nk] (shared), or [nq*nk];
/// masked keys get zero weight. A query with no unmasked key throws.
AttentionResult attention_forward(const Tensor& q, const Tensor& k, const Tensor& v,
                                  std::span<const std::uint8_t> key_mask = {});

struct MultiHeadAttention {
  Linear q, k, v, o;
  std::size_t heads = 1;
};

MultiHeadAttention make_multihead(ParamStore& store, const std::string& name, std::size_t dim, std::size_t heads,
                                  std::size_t kv_dim = 0);

/// Projects, splits channels into heads, attends per head, concatenates and
/// applies the output projection. query [nq][d], kv [nk][d_kv].
Tensor multihead_attention(const Tensor& query, const Tensor& kv, const MultiHeadAttention& mha,
                           std::span<const std::uint8_t> key_mask = {}, const AttentionObserver& observer = {},
                           std::string_view site = "attention");

/// Bilinear sample of every channel of a [C][H][W] map at normalized (u, v),
/// pixel centers at (i + 0.5) / size; coordinates clamped to the border.
std::vector<double> bilinear_sample(const Tensor& map, double u, double v);

/// Multi-scale deformable aggregation.
///   maps     L tensors [C][H_l][W_l]
///   refs     [nq][2] normalized (u, v)
///   offsets  [nq][heads][L][points][2] in pixels of each level
///   weights  [nq][heads][L][points], normalized over (L, points) per head
/// Head h reads channels [h*C/heads, (h+1)*C/heads). Output [nq][C].
Tensor deformable_aggregate(const std::vector<Tensor>& maps, const Tensor& refs, const Tensor& offsets,
                            const Tensor& weights, std::size_t heads);

struct DeformableAttention {
  Linear value_proj;  // C -> C, applied per pixel
  Linear offsets;     // C -> heads*levels*points*2
  Linear weights;     // C -> heads*levels*points
  Linear output;      // C -> C
  std::size_t heads = 4;
  std::size_t levels = 1;
  std::size_t points = 4;
};

DeformableAttention make_deformable(ParamStore& store, const std::string& name, std::size_t channels,
                                    std::size_t heads, std::size_t levels, std::size_t points);

/// Offsets and softmax weights predicted from the queries, sampling on the
/// value-projected maps, then the output projection.
Tensor deformable_attention_forward(const DeformableAttention& attn, const Tensor& query,
                                    const std::vector<Tensor>& maps, const Tensor& refs,
                                    const AttentionObserver& observer = {}, std::string_view site = "deformable");

using Int3 = std::array<int, 3>;

/// Cross-correlation. x [Cin][X][Y][Z], kernel [Cout][Cin][kx][ky][kz],
/// bias [Cout] or empty; zero padding. Output extent per axis is
/// (n + 2p - k) / s + 1.
Tensor conv3d_forward(const Tensor& x, const Tensor& kernel, const Tensor& bias, Int3 stride, Int3 padding);
Tensor conv3d_forward(const Tensor& x, const Tensor& kernel, const Tensor& bias, int stride = 1, int padding = 0);

/// Trilinear x2 upsampling with aligned corners: output index j samples the
/// input at j * (n - 1) / (2n - 1).
Tensor upsample_trilinear(const Tensor& x, int factor = 2);

/// (x - mean) / sqrt(var + 1e-5) * gain + bias along `axis`; empty gain/bias
/// mean identity affine.
Tensor layer_norm(const Tensor& x, std::span<const double> gain, std::span<const double> bias, std::size_t axis);

/// Concatenate [C_i][...] tensors along the channel axis.
Tensor concat_channels(const Tensor& a, const Tensor& b);

struct Conv3d {
  Tensor kernel;
  Tensor bias;
  Int3 stride{1, 1, 1};
  Int3 padding{1, 1, 1};
};

Conv3d make_conv3d(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Int3 kernel,
                   Int3 stride, Int3 padding);
/// Cubic kernel of side k.
Conv3d make_conv3d(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, int k, int stride,
                   int padding);

/// Center tap maps input channel j to output channel j for j < min(in, out).
void identity_init(Conv3d& conv);

Tensor conv3d_forward(const Tensor& x, const Conv3d& conv);

/// Toy stand-in for the image and depth encoders: a strided 3x3 conv stack
/// over an [Cin][H][W] image, one output level per stride-2 stage.
struct ToyEncoder {
  std::vector<Conv3d> stages;
};

ToyEncoder make_toy_encoder(ParamStore& store, const std::string& name, std::size_t in_channels,
                            std::size_t channels, std::size_t levels);

std::vector<Tensor> toy_encoder_forward(const ToyEncoder& enc, const Tensor& image);

}  // namespace hsocc::nn
