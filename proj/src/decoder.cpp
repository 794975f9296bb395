#include "hsocc/decoder.hpp"

#include <algorithm>
#include <cmath>

#include "hsocc/errors.hpp"

namespace hsocc::decoder {

using nn::Activation;
using nn::Conv3d;
using nn::Int3;
using nn::Linear;

void DecoderConfig::validate() const {
  if (channels < 2) throw ValidationError("decoder channels must be >= 2");
  if (heads == 0 || channels % heads != 0) throw ValidationError("decoder channels must be divisible by heads");
  if (num_queries == 0) throw ValidationError("decoder needs at least one global query");
  if (unet_scales < 2) throw ValidationError("UNet scale count must be >= 2");
  if (image_levels == 0 || points == 0) throw ValidationError("deformable attention needs levels and points");
  if (ffn_multiplier == 0) throw ValidationError("ffn multiplier must be >= 1");
}

void DecoderConfig::validate_grid(const std::array<int, 3>& dims) const {
  validate();
  const int step = 1 << (unet_scales - 1);
  for (int d : dims)
    if (d <= 0 || d % step != 0)
      throw DimensionError("grid dims must be divisible by 2^(S-1) = " + std::to_string(step));
}

std::size_t DecoderConfig::unet_channels(std::size_t s) const {
  return std::min(channels << s, 4 * channels);
}

DecoderConfig DecoderConfig::toy() {
  DecoderConfig c;
  c.channels = 16;
  c.num_queries = 8;
  c.iterations = 2;
  return c;
}

namespace {

// Creates parameters in a store, or binds them from an existing one.
class Builder {
 public:
  explicit Builder(nn::ParamStore* out) : out_(out) {}
  explicit Builder(const nn::ParamStore* in) : in_(in) {}

  Tensor tensor(const std::string& name, std::vector<std::size_t> shape, nn::Init init, std::size_t fan_in = 0) {
    const std::string full = "decoder." + name;
    if (out_ != nullptr) return out_->add(full, std::move(shape), init, fan_in);
    const Tensor& t = in_->get(full);
    if (t.shape() != shape)
      throw ShapeError("parameter '" + full + "' has shape " + nn::shape_string(t.shape()) + ", expected " +
                       nn::shape_string(shape));
    return t;
  }

  Linear linear(const std::string& name, std::size_t in, std::size_t out) {
    return {tensor(name + ".weight", {out, in}, nn::Init::uniform_fan_in, in),
            tensor(name + ".bias", {out}, nn::Init::zeros)};
  }

  Norm norm(const std::string& name, std::size_t width) {
    return {tensor(name + ".gain", {width}, nn::Init::ones), tensor(name + ".bias", {width}, nn::Init::zeros)};
  }

  nn::MultiHeadAttention attention(const std::string& name, std::size_t dim, std::size_t kv_dim, std::size_t heads) {
    return {linear(name + ".q", dim, dim), linear(name + ".k", kv_dim, dim), linear(name + ".v", kv_dim, dim),
            linear(name + ".o", dim, dim), heads};
  }

  nn::DeformableAttention deformable(const std::string& name, const DecoderConfig& cfg) {
    const std::size_t c = cfg.channels, hlp = cfg.heads * cfg.image_levels * cfg.points;
    nn::DeformableAttention a;
    a.heads = cfg.heads;
    a.levels = cfg.image_levels;
    a.points = cfg.points;
    a.value_proj = linear(name + ".value_proj", c, c);
    a.offsets = linear(name + ".sampling_offsets", c, 2 * hlp);
    a.weights = linear(name + ".attention_weights", c, hlp);
    a.output = linear(name + ".output_proj", c, c);
    return a;
  }

  Conv3d conv(const std::string& name, std::size_t in, std::size_t out, int stride) {
    Conv3d c;
    c.kernel = tensor(name + ".weight", {out, in, 3, 3, 3}, nn::Init::uniform_fan_in, in * 27);
    c.bias = tensor(name + ".bias", {out}, nn::Init::zeros);
    c.stride = Int3{stride, stride, stride};
    c.padding = Int3{1, 1, 1};
    return c;
  }

 private:
  nn::ParamStore* out_ = nullptr;
  const nn::ParamStore* in_ = nullptr;
};

DecoderParams build(Builder& b, const DecoderConfig& cfg) {
  cfg.validate();
  const std::size_t c = cfg.channels, nq = cfg.num_queries, s_count = cfg.unet_scales;
  DecoderParams p;
  p.mask_embedding = b.tensor("mask_embedding", {c}, nn::Init::uniform_fan_in, c);
  p.voxel_pos = b.linear("voxel_pos", 3, c);
  p.init_attn = b.deformable("init_attn", cfg);

  p.query_embed = b.tensor("query_embed", {nq, c}, nn::Init::uniform_fan_in, c);
  p.query_refs = b.tensor("query_refs", {nq, 2}, nn::Init::uniform_fan_in, 1);
  p.qi_norm = b.norm("qi_norm", c);
  p.qi_attn = b.deformable("qi_attn", cfg);

  p.sq_norm = b.norm("sq_norm", c);
  p.sq_kv_norm = b.norm("sq_kv_norm", c);
  p.sq_attn = b.attention("sq_attn", c, c, cfg.heads);

  for (std::size_t s = 0; s < s_count; ++s)
    p.unet_down.push_back(b.conv("unet.down" + std::to_string(s), s == 0 ? c : cfg.unet_channels(s - 1),
                                 cfg.unet_channels(s), s == 0 ? 1 : 2));
  for (std::size_t s = 1; s < s_count; ++s)
    p.unet_up.push_back(b.conv("unet.up" + std::to_string(s), cfg.unet_channels(s) + cfg.unet_channels(s - 1),
                               cfg.unet_channels(s - 1), 1));
  const std::size_t low_c = cfg.unet_channels(s_count - 1);
  p.gq_norm = b.norm("gq_norm", c);
  p.gq_kv_norm = b.norm("gq_kv_norm", low_c);
  p.gq_attn = b.attention("gq_attn", c, low_c, cfg.heads);

  p.sa_norm = b.norm("sa_norm", c);
  p.sa_attn = b.attention("sa_attn", c, c, cfg.heads);
  p.ffn_norm = b.norm("ffn_norm", c);
  p.ffn.hidden = Activation::relu;
  p.ffn.output = Activation::identity;
  p.ffn.layers.push_back(b.linear("ffn.0", c, cfg.ffn_multiplier * c));
  p.ffn.layers.push_back(b.linear("ffn.1", cfg.ffn_multiplier * c, c));
  return p;
}

Tensor normed(const Tensor& rows, const Norm& n) { return nn::layer_norm(rows, n.gain.data(), n.bias.data(), 1); }

void add_in_place(Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("residual shapes differ");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

std::size_t voxel_count(const Tensor& q_vox) { return q_vox.dim(1) * q_vox.dim(2) * q_vox.dim(3); }

/// Rows of the in-mask voxels of a [C][X][Y][Z] volume.
Tensor gather_rows(const Tensor& q_vox, const std::vector<std::size_t>& idx) {
  const std::size_t c = q_vox.dim(0), n = voxel_count(q_vox);
  Tensor out({idx.size(), c});
  for (std::size_t r = 0; r < idx.size(); ++r)
    for (std::size_t k = 0; k < c; ++k) out.at(r, k) = q_vox[k * n + idx[r]];
  return out;
}

void scatter_rows(Tensor& q_vox, const std::vector<std::size_t>& idx, const Tensor& rows) {
  const std::size_t c = q_vox.dim(0), n = voxel_count(q_vox);
  for (std::size_t r = 0; r < idx.size(); ++r)
    for (std::size_t k = 0; k < c; ++k) q_vox[k * n + idx[r]] = rows.at(r, k);
}

std::vector<std::size_t> mask_indices(const std::vector<std::uint8_t>& mask) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i] != 0) idx.push_back(i);
  return idx;
}

Tensor relu(Tensor t) {
  for (double& v : t.data()) v = nn::activate(Activation::relu, v);
  return t;
}

}  // namespace

DecoderParams make_decoder_params(nn::ParamStore& store, const DecoderConfig& cfg) {
  Builder b(&store);
  return build(b, cfg);
}

DecoderParams bind_decoder_params(const nn::ParamStore& store, const DecoderConfig& cfg) {
  Builder b(&store);
  return build(b, cfg);
}

void SceneState::validate() const {
  const std::size_t n = spec.voxel_count();
  if (q_vox.rank() != 4 || q_vox.dim(1) != static_cast<std::size_t>(spec.dims[0]) ||
      q_vox.dim(2) != static_cast<std::size_t>(spec.dims[1]) || q_vox.dim(3) != static_cast<std::size_t>(spec.dims[2]))
    throw ShapeError("q_vox " + nn::shape_string(q_vox.shape()) + " does not match the grid");
  if (q_g.rank() != 2 || q_g.dim(1) != q_vox.dim(0)) throw ShapeError("q_g width differs from q_vox channels");
  if (fov.size() != n || proposal.size() != n) throw ShapeError("scene masks are not sized to the grid");
  if (refs.rank() != 2 || refs.dim(0) != n || refs.dim(1) != 2) throw ShapeError("reference points must be [n][2]");
  if (!q_vox.all_finite() || !q_g.all_finite()) throw ValidationError("scene features are not finite");
}

SceneState init_voxel_features(const DecoderInputs& in, const DecoderParams& p,
                               const nn::AttentionObserver& observer) {
  const GridSpec& spec = in.proposals.spec;
  if (!(in.refpts.spec == spec)) throw ShapeError("proposals and reference points use different grids");
  const std::size_t n = spec.voxel_count(), c = p.mask_embedding.size();
  if (in.proposals.proposal.size() != n || in.refpts.fov.size() != n || in.refpts.uv.size() != 2 * n)
    throw ShapeError("proposal or reference-point arrays are not sized to the grid");
  for (const auto& f : in.features)
    if (f.rank() != 3 || f.dim(0) != c) throw ShapeError("F2D levels must be [C][H][W] with C = decoder channels");

  SceneState s;
  s.spec = spec;
  s.fov = in.refpts.fov;
  s.proposal.assign(n, 0);
  s.refs = Tensor({n, 2}, std::vector<double>(in.refpts.uv));
  s.q_g = p.query_embed;
  s.q_vox = Tensor({c, static_cast<std::size_t>(spec.dims[0]), static_cast<std::size_t>(spec.dims[1]),
                    static_cast<std::size_t>(spec.dims[2])});
  for (std::size_t k = 0; k < c; ++k) std::fill_n(s.q_vox.data().begin() + k * n, n, p.mask_embedding[k]);

  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < n; ++i)
    if (in.proposals.proposal[i] != 0 && in.refpts.fov[i] != 0) {
      idx.push_back(i);
      s.proposal[i] = 1;
    }
  if (!idx.empty()) {
    Tensor pos({idx.size(), 3}), refs({idx.size(), 2});
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const auto xyz = spec.coords(idx[r]);
      for (int a = 0; a < 3; ++a) pos.at(r, a) = (xyz[a] + 0.5) / spec.dims[a];
      refs.at(r, 0) = in.refpts.uv[2 * idx[r]];
      refs.at(r, 1) = in.refpts.uv[2 * idx[r] + 1];
    }
    const Tensor query = nn::linear_forward(pos, p.voxel_pos);
    scatter_rows(s.q_vox, idx, nn::deformable_attention_forward(p.init_attn, query, in.features, refs, observer,
                                                                "init_voxel"));
  }
  s.validate();
  return s;
}

SceneState query_image_ca(const SceneState& s, const std::vector<Tensor>& features, const DecoderParams& p,
                          const nn::AttentionObserver& observer) {
  Tensor refs = p.query_refs;
  for (double& v : refs.data()) v = nn::activate(Activation::sigmoid, v);
  if (refs.dim(0) != s.q_g.dim(0)) throw ShapeError("query reference points do not match the query count");
  SceneState out = s;
  add_in_place(out.q_g,
               nn::deformable_attention_forward(p.qi_attn, normed(s.q_g, p.qi_norm), features, refs, observer,
                                                "query_image"));
  return out;
}

SceneState scene_query_ca(const SceneState& s, const DecoderParams& p, const nn::AttentionObserver& observer) {
  SceneState out = s;
  const auto idx = mask_indices(s.fov);
  if (idx.empty()) return out;
  Tensor rows = gather_rows(s.q_vox, idx);
  add_in_place(rows, nn::multihead_attention(normed(rows, p.sq_norm), normed(s.q_g, p.sq_kv_norm), p.sq_attn, {},
                                             observer, "scene_query"));
  scatter_rows(out.q_vox, idx, rows);
  return out;
}

SceneState gq_module(const SceneState& s, const DecoderParams& p, const nn::AttentionObserver& observer) {
  const std::size_t scales = p.unet_down.size();
  if (scales < 2 || p.unet_up.size() + 1 != scales) throw ShapeError("UNet parameters are malformed");
  const int step = 1 << (scales - 1);
  for (std::size_t a = 1; a <= 3; ++a)
    if (s.q_vox.dim(a) % step != 0)
      throw DimensionError("q_vox dims must be divisible by 2^(S-1) = " + std::to_string(step));

  std::vector<Tensor> enc;
  enc.push_back(relu(nn::conv3d_forward(s.q_vox, p.unet_down[0])));
  for (std::size_t k = 1; k < scales; ++k) enc.push_back(relu(nn::conv3d_forward(enc.back(), p.unet_down[k])));

  SceneState out = s;
  const Tensor& lowest = enc.back();
  const Tensor kv = nn::channels_last(lowest);
  add_in_place(out.q_g, nn::multihead_attention(normed(s.q_g, p.gq_norm), normed(kv, p.gq_kv_norm), p.gq_attn, {},
                                                observer, "global_query"));

  Tensor d = lowest;
  for (std::size_t k = scales - 1; k >= 1; --k) {
    d = nn::conv3d_forward(nn::concat_channels(nn::upsample_trilinear(d, 2), enc[k - 1]), p.unet_up[k - 1]);
    if (k > 1) d = relu(std::move(d));
  }
  if (d.shape() != s.q_vox.shape()) throw ShapeError("UNet output shape differs from its input");
  out.q_vox = std::move(d);
  return out;
}

SceneState query_self_attention(const SceneState& s, const DecoderParams& p, const nn::AttentionObserver& observer) {
  SceneState out = s;
  const Tensor x = normed(s.q_g, p.sa_norm);
  add_in_place(out.q_g, nn::multihead_attention(x, x, p.sa_attn, {}, observer, "query_self"));
  add_in_place(out.q_g, nn::mlp_forward(normed(out.q_g, p.ffn_norm), p.ffn));
  return out;
}

DecoderRun run_decoder(const DecoderInputs& in, const DecoderParams& p, const DecoderConfig& cfg,
                       const nn::AttentionObserver& observer) {
  cfg.validate_grid(in.proposals.spec.dims);
  if (in.features.size() != cfg.image_levels)
    throw ShapeError("expected " + std::to_string(cfg.image_levels) + " F2D levels, got " +
                     std::to_string(in.features.size()));
  DecoderRun run;
  run.initial = init_voxel_features(in, p, observer);
  SceneState s = run.initial;
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    s = query_image_ca(s, in.features, p, observer);
    s = scene_query_ca(s, p, observer);
    s = gq_module(s, p, observer);
    s = query_self_attention(s, p, observer);
  }
  s.validate();
  run.final_state = std::move(s);
  return run;
}

}  // namespace hsocc::decoder
