#include "hsocc/mini_nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hsocc/errors.hpp"
#include "hsocc/kernels.hpp"

namespace hsocc::nn {

double activate(Activation a, double x) {
  switch (a) {
    case Activation::identity:
      return x;
    case Activation::relu:
      return x > 0.0 ? x : 0.0;
    case Activation::sigmoid:
      return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  return x;
}

Linear make_linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out) {
  Linear l;
  l.weight = store.add(name + ".weight", {out, in}, Init::uniform_fan_in, in);
  l.bias = store.add(name + ".bias", {out}, Init::zeros);
  return l;
}

Linear bind_linear(const ParamStore& store, const std::string& name) {
  return {store.get(name + ".weight"), store.get(name + ".bias")};
}

Tensor linear_forward(const Tensor& x, const Linear& layer) {
  if (layer.weight.rank() != 2 || layer.bias.rank() != 1 || layer.bias.dim(0) != layer.weight.dim(0))
    throw ShapeError("linear layer parameters are malformed");
  if (x.rank() != 2 || x.dim(1) != layer.in_features())
    throw ShapeError("linear_forward: input " + shape_string(x.shape()) + " vs weight " +
                     shape_string(layer.weight.shape()));
  const std::size_t n = x.dim(0), out = layer.out_features();
  Tensor y({n, out});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < out; ++o) y.at(i, o) = layer.bias[o] + kernels::dot(x.row(i), layer.weight.row(o));
  return y;
}

Mlp make_mlp(ParamStore& store, const std::string& name, const std::vector<std::size_t>& widths, Activation hidden,
             Activation output) {
  if (widths.size() < 2) throw ShapeError("an MLP needs at least input and output widths");
  Mlp m;
  m.hidden = hidden;
  m.output = output;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i)
    m.layers.push_back(make_linear(store, name + "." + std::to_string(i), widths[i], widths[i + 1]));
  return m;
}

Tensor mlp_forward(const Tensor& x, const Mlp& mlp) {
  if (mlp.layers.empty()) throw ShapeError("empty MLP");
  for (std::size_t i = 0; i + 1 < mlp.layers.size(); ++i)
    if (mlp.layers[i].out_features() != mlp.layers[i + 1].in_features())
      throw ShapeError("MLP width chain is inconsistent at layer " + std::to_string(i));
  Tensor h = x;
  for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
    h = linear_forward(h, mlp.layers[i]);
    const Activation act = i + 1 == mlp.layers.size() ? mlp.output : mlp.hidden;
    if (act != Activation::identity)
      for (double& v : h.data()) v = activate(act, v);
  }
  return h;
}

AttentionResult attention_forward(const Tensor& q, const Tensor& k, const Tensor& v,
                                  std::span<const std::uint8_t> key_mask) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) throw ShapeError("attention_forward expects rank-2 tensors");
  if (q.dim(1) != k.dim(1)) throw ShapeError("attention_forward: query and key widths differ");
  if (k.dim(0) != v.dim(0)) throw ShapeError("attention_forward: key and value counts differ");
  const std::size_t nq = q.dim(0), nk = k.dim(0), dv = v.dim(1);
  const bool shared = key_mask.size() == nk;
  if (!key_mask.empty() && !shared && key_mask.size() != nq * nk)
    throw ShapeError("attention_forward: key mask has the wrong size");
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  AttentionResult res{Tensor({nq, dv}), Tensor({nq, nk})};
  for (std::size_t i = 0; i < nq; ++i) {
    auto allowed = [&](std::size_t j) {
      if (key_mask.empty()) return true;
      return (shared ? key_mask[j] : key_mask[i * nk + j]) != 0;
    };
    auto w = res.weights.row(i);
    double best = -INFINITY;
    for (std::size_t j = 0; j < nk; ++j) {
      if (!allowed(j)) continue;
      w[j] = kernels::dot(q.row(i), k.row(j)) * scale;
      best = std::max(best, w[j]);
    }
    if (best == -INFINITY) throw ValidationError("attention_forward: query row " + std::to_string(i) + " is fully masked");
    double sum = 0.0;
    for (std::size_t j = 0; j < nk; ++j) {
      w[j] = allowed(j) ? std::exp(w[j] - best) : 0.0;
      sum += w[j];
    }
    for (std::size_t j = 0; j < nk; ++j) w[j] /= sum;
    auto out = res.output.row(i);
    for (std::size_t j = 0; j < nk; ++j)
      if (w[j] != 0.0) kernels::axpy(w[j], v.row(j), out);
  }
  return res;
}

MultiHeadAttention make_multihead(ParamStore& store, const std::string& name, std::size_t dim, std::size_t heads,
                                  std::size_t kv_dim) {
  if (heads == 0 || dim % heads != 0) throw ShapeError("attention width must be divisible by the head count");
  if (kv_dim == 0) kv_dim = dim;
  MultiHeadAttention m;
  m.q = make_linear(store, name + ".q", dim, dim);
  m.k = make_linear(store, name + ".k", kv_dim, dim);
  m.v = make_linear(store, name + ".v", kv_dim, dim);
  m.o = make_linear(store, name + ".o", dim, dim);
  m.heads = heads;
  return m;
}

namespace {

Tensor head_slice(const Tensor& x, std::size_t h, std::size_t dh) {
  Tensor out({x.dim(0), dh});
  for (std::size_t i = 0; i < x.dim(0); ++i)
    for (std::size_t c = 0; c < dh; ++c) out.at(i, c) = x.at(i, h * dh + c);
  return out;
}

}  // namespace

Tensor multihead_attention(const Tensor& query, const Tensor& kv, const MultiHeadAttention& mha,
                           std::span<const std::uint8_t> key_mask, const AttentionObserver& observer,
                           std::string_view site) {
  const Tensor q = linear_forward(query, mha.q);
  const Tensor k = linear_forward(kv, mha.k);
  const Tensor v = linear_forward(kv, mha.v);
  const std::size_t d = q.dim(1);
  if (mha.heads == 0 || d % mha.heads != 0) throw ShapeError("attention width must be divisible by the head count");
  const std::size_t dh = d / mha.heads;
  Tensor merged({q.dim(0), d});
  for (std::size_t h = 0; h < mha.heads; ++h) {
    const AttentionResult r = attention_forward(head_slice(q, h, dh), head_slice(k, h, dh), head_slice(v, h, dh), key_mask);
    if (observer) observer(site, r.weights);
    for (std::size_t i = 0; i < q.dim(0); ++i)
      for (std::size_t c = 0; c < dh; ++c) merged.at(i, h * dh + c) = r.output.at(i, c);
  }
  return linear_forward(merged, mha.o);
}

namespace {

// Channels-last copy of a [C][H][W] map.
struct HwcMap {
  std::size_t height = 0, width = 0, channels = 0;
  std::vector<double> data;

  std::span<const double> pixel(std::size_t y, std::size_t x) const {
    return {data.data() + (y * width + x) * channels, channels};
  }
};

HwcMap to_hwc(const Tensor& map) {
  if (map.rank() != 3) throw ShapeError("feature maps must be [C][H][W]");
  HwcMap m{map.dim(1), map.dim(2), map.dim(0), std::vector<double>(map.size())};
  const std::size_t hw = m.height * m.width;
  for (std::size_t c = 0; c < m.channels; ++c)
    for (std::size_t p = 0; p < hw; ++p) m.data[p * m.channels + c] = map[c * hw + p];
  return m;
}

// out[c0..c1) += weight * bilinear(map, u, v)[c0..c1)
void accumulate_sample(const HwcMap& m, double u, double v, std::size_t c0, std::size_t c1, double weight,
                       std::span<double> out) {
  const double x = std::clamp(u * static_cast<double>(m.width) - 0.5, 0.0, static_cast<double>(m.width - 1));
  const double y = std::clamp(v * static_cast<double>(m.height) - 0.5, 0.0, static_cast<double>(m.height - 1));
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const std::size_t x1 = std::min(x0 + 1, m.width - 1);
  const std::size_t y1 = std::min(y0 + 1, m.height - 1);
  const double fx = x - static_cast<double>(x0);
  const double fy = y - static_cast<double>(y0);
  const double w00 = (1.0 - fx) * (1.0 - fy), w01 = fx * (1.0 - fy), w10 = (1.0 - fx) * fy, w11 = fx * fy;
  const std::size_t n = c1 - c0;
  auto dst = out.subspan(c0, n);
  const std::pair<double, std::span<const double>> taps[4] = {
      {w00, m.pixel(y0, x0)}, {w01, m.pixel(y0, x1)}, {w10, m.pixel(y1, x0)}, {w11, m.pixel(y1, x1)}};
  for (const auto& [tw, px] : taps)
    if (tw != 0.0) kernels::axpy(weight * tw, px.subspan(c0, n), dst);
}

Tensor aggregate_hwc(const std::vector<HwcMap>& maps, const Tensor& refs, const Tensor& offsets, const Tensor& weights,
                     std::size_t heads) {
  if (maps.empty()) throw ShapeError("deformable aggregation needs at least one feature level");
  const std::size_t channels = maps[0].channels;
  for (const auto& m : maps)
    if (m.channels != channels) throw ShapeError("feature levels disagree on channel count");
  if (heads == 0 || channels % heads != 0) throw ShapeError("channels must be divisible by the head count");
  const std::size_t levels = maps.size();
  if (refs.rank() != 2 || refs.dim(1) != 2) throw ShapeError("reference points must be [nq][2]");
  const std::size_t nq = refs.dim(0);
  if (weights.rank() != 4 || weights.dim(0) != nq || weights.dim(1) != heads || weights.dim(2) != levels)
    throw ShapeError("sampling weights must be [nq][heads][levels][points]");
  const std::size_t points = weights.dim(3);
  if (offsets.rank() != 5 || offsets.dim(0) != nq || offsets.dim(1) != heads || offsets.dim(2) != levels ||
      offsets.dim(3) != points || offsets.dim(4) != 2)
    throw ShapeError("sampling offsets must be [nq][heads][levels][points][2]");
  const std::size_t dh = channels / heads;
  Tensor out({nq, channels});
  for (std::size_t q = 0; q < nq; ++q) {
    const double ru = refs.at(q, 0), rv = refs.at(q, 1);
    auto dst = out.row(q);
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t l = 0; l < levels; ++l)
        for (std::size_t p = 0; p < points; ++p) {
          const std::size_t s = ((q * heads + h) * levels + l) * points + p;
          const double u = ru + offsets[2 * s] / static_cast<double>(maps[l].width);
          const double v = rv + offsets[2 * s + 1] / static_cast<double>(maps[l].height);
          accumulate_sample(maps[l], u, v, h * dh, (h + 1) * dh, weights[s], dst);
        }
  }
  return out;
}

}  // namespace

std::vector<double> bilinear_sample(const Tensor& map, double u, double v) {
  const HwcMap m = to_hwc(map);
  std::vector<double> out(m.channels, 0.0);
  accumulate_sample(m, u, v, 0, m.channels, 1.0, out);
  return out;
}

Tensor deformable_aggregate(const std::vector<Tensor>& maps, const Tensor& refs, const Tensor& offsets,
                            const Tensor& weights, std::size_t heads) {
  std::vector<HwcMap> hwc;
  for (const auto& m : maps) hwc.push_back(to_hwc(m));
  return aggregate_hwc(hwc, refs, offsets, weights, heads);
}

DeformableAttention make_deformable(ParamStore& store, const std::string& name, std::size_t channels,
                                    std::size_t heads, std::size_t levels, std::size_t points) {
  if (heads == 0 || channels % heads != 0) throw ShapeError("channels must be divisible by the head count");
  DeformableAttention a;
  a.heads = heads;
  a.levels = levels;
  a.points = points;
  a.value_proj = make_linear(store, name + ".value_proj", channels, channels);
  a.offsets = make_linear(store, name + ".sampling_offsets", channels, heads * levels * points * 2);
  a.weights = make_linear(store, name + ".attention_weights", channels, heads * levels * points);
  a.output = make_linear(store, name + ".output_proj", channels, channels);
  return a;
}

Tensor deformable_attention_forward(const DeformableAttention& attn, const Tensor& query,
                                    const std::vector<Tensor>& maps, const Tensor& refs,
                                    const AttentionObserver& observer, std::string_view site) {
  if (maps.size() != attn.levels)
    throw ShapeError("deformable attention configured for " + std::to_string(attn.levels) + " levels, got " +
                     std::to_string(maps.size()));
  if (query.rank() != 2 || refs.rank() != 2 || query.dim(0) != refs.dim(0))
    throw ShapeError("deformable attention: query and reference counts differ");
  const std::size_t nq = query.dim(0);
  if (nq == 0) return Tensor({0, attn.output.out_features()});

  std::vector<HwcMap> values;
  for (const auto& m : maps) {
    HwcMap hwc = to_hwc(m);
    const Tensor rows({hwc.height * hwc.width, hwc.channels}, std::move(hwc.data));
    const Tensor projected = linear_forward(rows, attn.value_proj);
    hwc.data = projected.values();
    hwc.channels = projected.dim(1);
    values.push_back(std::move(hwc));
  }

  const std::size_t lp = attn.levels * attn.points;
  Tensor offsets = linear_forward(query, attn.offsets).reshaped({nq, attn.heads, attn.levels, attn.points, 2});
  Tensor logits = linear_forward(query, attn.weights);
  Tensor weights({nq * attn.heads, lp});
  for (std::size_t r = 0; r < nq * attn.heads; ++r) {
    const auto src = logits.data().subspan(r * lp, lp);
    const double best = *std::max_element(src.begin(), src.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < lp; ++j) sum += (weights[r * lp + j] = std::exp(src[j] - best));
    for (std::size_t j = 0; j < lp; ++j) weights[r * lp + j] /= sum;
  }
  if (observer) observer(site, weights);
  const Tensor agg =
      aggregate_hwc(values, refs, offsets, weights.reshaped({nq, attn.heads, attn.levels, attn.points}), attn.heads);
  return linear_forward(agg, attn.output);
}

Tensor conv3d_forward(const Tensor& x, const Tensor& kernel, const Tensor& bias, Int3 stride, Int3 padding) {
  if (x.rank() != 4) throw ShapeError("conv3d input must be [C][X][Y][Z]");
  if (kernel.rank() != 5) throw ShapeError("conv3d kernel must be [Cout][Cin][kx][ky][kz]");
  if (kernel.dim(1) != x.dim(0))
    throw ShapeError("conv3d: kernel expects " + std::to_string(kernel.dim(1)) + " input channels, got " +
                     std::to_string(x.dim(0)));
  const std::size_t cout = kernel.dim(0), cin = x.dim(0);
  if (!bias.empty() && (bias.rank() != 1 || bias.dim(0) != cout)) throw ShapeError("conv3d bias must be [Cout]");
  std::array<int, 3> in{}, k{}, out{};
  for (int a = 0; a < 3; ++a) {
    in[a] = static_cast<int>(x.dim(1 + a));
    k[a] = static_cast<int>(kernel.dim(2 + a));
    if (stride[a] < 1 || padding[a] < 0) throw ShapeError("conv3d: invalid stride or padding");
    if (in[a] + 2 * padding[a] < k[a]) throw ShapeError("conv3d: kernel does not fit the padded input");
    out[a] = (in[a] + 2 * padding[a] - k[a]) / stride[a] + 1;
  }
  const std::size_t plane = static_cast<std::size_t>(in[0]) * in[1] * in[2];
  const std::size_t taps = static_cast<std::size_t>(k[0]) * k[1] * k[2];
  Tensor y({cout, static_cast<std::size_t>(out[0]), static_cast<std::size_t>(out[1]), static_cast<std::size_t>(out[2])});
  const std::size_t oplane = static_cast<std::size_t>(out[0]) * out[1] * out[2];
  std::vector<double> patch(cin * taps);
  for (int ox = 0; ox < out[0]; ++ox)
    for (int oy = 0; oy < out[1]; ++oy)
      for (int oz = 0; oz < out[2]; ++oz) {
        std::size_t t = 0;
        for (std::size_t c = 0; c < cin; ++c)
          for (int kx = 0; kx < k[0]; ++kx) {
            const int ix = ox * stride[0] - padding[0] + kx;
            for (int ky = 0; ky < k[1]; ++ky) {
              const int iy = oy * stride[1] - padding[1] + ky;
              for (int kz = 0; kz < k[2]; ++kz, ++t) {
                const int iz = oz * stride[2] - padding[2] + kz;
                const bool inside = ix >= 0 && iy >= 0 && iz >= 0 && ix < in[0] && iy < in[1] && iz < in[2];
                patch[t] = inside ? x[c * plane + (static_cast<std::size_t>(ix) * in[1] + iy) * in[2] + iz] : 0.0;
              }
            }
          }
        const std::size_t o = (static_cast<std::size_t>(ox) * out[1] + oy) * out[2] + oz;
        for (std::size_t co = 0; co < cout; ++co)
          y[co * oplane + o] = (bias.empty() ? 0.0 : bias[co]) + kernels::dot(kernel.row(co), patch);
      }
  return y;
}

Tensor conv3d_forward(const Tensor& x, const Tensor& kernel, const Tensor& bias, int stride, int padding) {
  return conv3d_forward(x, kernel, bias, Int3{stride, stride, stride}, Int3{padding, padding, padding});
}

Tensor upsample_trilinear(const Tensor& x, int factor) {
  if (x.rank() != 4) throw ShapeError("upsample_trilinear input must be [C][X][Y][Z]");
  if (factor < 1) throw ShapeError("upsample factor must be >= 1");
  Tensor cur = x;
  for (int axis = 1; axis <= 3; ++axis) {
    std::vector<std::size_t> shape = cur.shape();
    const std::size_t n = shape[axis];
    const std::size_t m = n * static_cast<std::size_t>(factor);
    shape[axis] = m;
    Tensor next(shape);
    std::size_t outer = 1, inner = 1;
    for (int a = 0; a < axis; ++a) outer *= shape[a];
    for (int a = axis + 1; a < 4; ++a) inner *= shape[a];
    for (std::size_t j = 0; j < m; ++j) {
      const double src = m == 1 || n == 1 ? 0.0 : static_cast<double>(j) * static_cast<double>(n - 1) / static_cast<double>(m - 1);
      const auto i0 = std::min(static_cast<std::size_t>(std::floor(src)), n - 1);
      const std::size_t i1 = std::min(i0 + 1, n - 1);
      const double f = src - static_cast<double>(i0);
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t q = 0; q < inner; ++q) {
          const double a = cur[(o * n + i0) * inner + q];
          const double b = cur[(o * n + i1) * inner + q];
          next[(o * m + j) * inner + q] = a + f * (b - a);
        }
    }
    cur = std::move(next);
  }
  return cur;
}

Tensor layer_norm(const Tensor& x, std::span<const double> gain, std::span<const double> bias, std::size_t axis) {
  if (axis >= x.rank()) throw ShapeError("layer_norm axis out of range");
  const std::size_t n = x.dim(axis);
  if (n < 2) throw ShapeError("layer_norm needs an axis of length >= 2");
  if ((!gain.empty() && gain.size() != n) || (!bias.empty() && bias.size() != n))
    throw ShapeError("layer_norm affine parameters do not match the axis length");
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= x.dim(a);
  for (std::size_t a = axis + 1; a < x.rank(); ++a) inner *= x.dim(a);
  Tensor y(x.shape());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t q = 0; q < inner; ++q) {
      auto idx = [&](std::size_t j) { return (o * n + j) * inner + q; };
      double mean = 0.0;
      for (std::size_t j = 0; j < n; ++j) mean += x[idx(j)];
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t j = 0; j < n; ++j) var += (x[idx(j)] - mean) * (x[idx(j)] - mean);
      var /= static_cast<double>(n);
      const double inv = 1.0 / std::sqrt(var + 1e-5);
      for (std::size_t j = 0; j < n; ++j) {
        double v = (x[idx(j)] - mean) * inv;
        if (!gain.empty()) v *= gain[j];
        if (!bias.empty()) v += bias[j];
        y[idx(j)] = v;
      }
    }
  return y;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || a.rank() < 1) throw ShapeError("concat_channels: rank mismatch");
  for (std::size_t i = 1; i < a.rank(); ++i)
    if (a.dim(i) != b.dim(i)) throw ShapeError("concat_channels: spatial shapes differ");
  std::vector<std::size_t> shape = a.shape();
  shape[0] += b.dim(0);
  std::vector<double> data(a.values());
  data.insert(data.end(), b.values().begin(), b.values().end());
  return Tensor(std::move(shape), std::move(data));
}

Conv3d make_conv3d(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Int3 kernel,
                   Int3 stride, Int3 padding) {
  const std::size_t fan_in = in * static_cast<std::size_t>(kernel[0] * kernel[1] * kernel[2]);
  Conv3d c;
  c.kernel = store.add(name + ".weight",
                       {out, in, static_cast<std::size_t>(kernel[0]), static_cast<std::size_t>(kernel[1]),
                        static_cast<std::size_t>(kernel[2])},
                       Init::uniform_fan_in, fan_in);
  c.bias = store.add(name + ".bias", {out}, Init::zeros);
  c.stride = stride;
  c.padding = padding;
  return c;
}

Conv3d make_conv3d(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, int k, int stride,
                   int padding) {
  return make_conv3d(store, name, in, out, Int3{k, k, k}, Int3{stride, stride, stride}, Int3{padding, padding, padding});
}

void identity_init(Conv3d& conv) {
  auto& w = conv.kernel;
  for (double& v : w.data()) v = 0.0;
  for (double& v : conv.bias.data()) v = 0.0;
  const std::size_t kx = w.dim(2), ky = w.dim(3), kz = w.dim(4);
  const std::size_t center = ((kx / 2) * ky + ky / 2) * kz + kz / 2;
  const std::size_t taps = kx * ky * kz;
  for (std::size_t c = 0; c < std::min(w.dim(0), w.dim(1)); ++c) w[(c * w.dim(1) + c) * taps + center] = 1.0;
}

Tensor conv3d_forward(const Tensor& x, const Conv3d& conv) {
  return conv3d_forward(x, conv.kernel, conv.bias, conv.stride, conv.padding);
}

ToyEncoder make_toy_encoder(ParamStore& store, const std::string& name, std::size_t in_channels,
                            std::size_t channels, std::size_t levels) {
  ToyEncoder enc;
  for (std::size_t l = 0; l < levels; ++l)
    enc.stages.push_back(make_conv3d(store, name + ".stage" + std::to_string(l), l == 0 ? in_channels : channels,
                                     channels, Int3{3, 3, 1}, Int3{2, 2, 1}, Int3{1, 1, 0}));
  return enc;
}

std::vector<Tensor> toy_encoder_forward(const ToyEncoder& enc, const Tensor& image) {
  if (image.rank() != 3) throw ShapeError("toy encoder input must be [C][H][W]");
  Tensor cur = image.reshaped({image.dim(0), image.dim(1), image.dim(2), 1});
  std::vector<Tensor> levels;
  for (const auto& stage : enc.stages) {
    cur = conv3d_forward(cur, stage);
    for (double& v : cur.data()) v = activate(Activation::relu, v);
    levels.push_back(cur.reshaped({cur.dim(0), cur.dim(1), cur.dim(2)}));
  }
  return levels;
}

}  // namespace hsocc::nn
