#include <doctest.h>

#include <cmath>
#include <numeric>

#include "hsocc/errors.hpp"
#include "hsocc/mini_nn.hpp"
#include "oracles.hpp"

using namespace hsocc;
using namespace hsocc::nn;

namespace {

Tensor random_tensor(CounterRng& r, std::vector<std::size_t> shape, double lo = -1, double hi = 1) {
  return Tensor(shape, oracle::random_vector(r, shape_product(shape), lo, hi));
}

}  // namespace

TEST_CASE("MLP basics") {
  CounterRng r(61, 0);
  const Tensor x = random_tensor(r, {5, 3});
  Mlp id;
  id.hidden = Activation::identity;
  Linear l{Tensor({3, 3}), Tensor({3})};
  for (std::size_t i = 0; i < 3; ++i) l.weight.at(i, i) = 1.0;
  id.layers = {l, l};
  CHECK(mlp_forward(x, id) == x);

  Mlp bias;
  bias.layers = {Linear{Tensor({2, 3}), Tensor({2}, {0.25, -4.0})}};
  const auto b = mlp_forward(x, bias);
  for (std::size_t i = 0; i < 5; ++i) CHECK((b.at(i, 0) == 0.25 && b.at(i, 1) == -4.0));

  // 1x1 chain: relu(2 * 0.75 - 3) = 0 then 0 * 5 + 1 = 1; and relu(2*3-3)=3 -> 16
  Mlp s;
  s.layers = {Linear{Tensor({1, 1}, {2.0}), Tensor({1}, {-3.0})}, Linear{Tensor({1, 1}, {5.0}), Tensor({1}, {1.0})}};
  CHECK(mlp_forward(Tensor({2, 1}, {0.75, 3.0}), s) == Tensor({2, 1}, {1.0, 16.0}));
  s.output = Activation::sigmoid;
  CHECK(mlp_forward(Tensor({1, 1}, {0.75}), s)[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));

  Mlp bad;
  bad.layers = {Linear{Tensor({2, 3}), Tensor({2})}, Linear{Tensor({2, 3}), Tensor({2})}};
  CHECK_THROWS_AS(mlp_forward(x, bad), ShapeError);
}

TEST_CASE("scaled dot-product attention") {
  CounterRng r(62, 0);
  const Tensor q = random_tensor(r, {4, 3});
  const Tensor k1 = random_tensor(r, {1, 3}), v1 = random_tensor(r, {1, 2});
  const auto a1 = attention_forward(q, k1, v1);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 2; ++j) CHECK(a1.output.at(i, j) == doctest::Approx(v1[j]).epsilon(1e-15));

  Tensor kk({3, 3});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) kk.at(i, j) = k1[j];
  const Tensor v = random_tensor(r, {3, 2});
  const auto am = attention_forward(q, kk, v);
  for (std::size_t j = 0; j < 2; ++j)
    CHECK(am.output.at(0, j) == doctest::Approx((v.at(0, j) + v.at(1, j) + v.at(2, j)) / 3).epsilon(1e-12));

  const Tensor k = random_tensor(r, {6, 3}), vv = random_tensor(r, {6, 2});
  const auto base = attention_forward(q, k, vv);
  for (std::size_t i = 0; i < 4; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 6; ++j) {
      CHECK(base.weights.at(i, j) >= 0.0);
      s += base.weights.at(i, j);
    }
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
  const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  Tensor kp({6, 3}), vp({6, 2});
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t j = 0; j < 3; ++j) kp.at(i, j) = k.at(perm[i], j);
    for (std::size_t j = 0; j < 2; ++j) vp.at(i, j) = vv.at(perm[i], j);
  }
  const auto moved = attention_forward(q, kp, vp);
  for (std::size_t i = 0; i < base.output.size(); ++i) CHECK(std::abs(moved.output[i] - base.output[i]) < 1e-12);

  const std::vector<std::uint8_t> mask{1, 0, 1, 0, 0, 0};
  const auto mk = attention_forward(q, k, vv, mask);
  for (std::size_t i = 0; i < 4; ++i) CHECK(mk.weights.at(i, 1) == 0.0);
  const std::vector<std::uint8_t> none(6, 0);
  CHECK_THROWS_AS(attention_forward(q, k, vv, none), ValidationError);
}

TEST_CASE("multi-head attention reports normalized weights") {
  ParamStore store(3);
  const auto mha = make_multihead(store, "m", 8, 2, 4);
  CounterRng r(63, 0);
  int calls = 0;
  const auto out = multihead_attention(random_tensor(r, {5, 8}), random_tensor(r, {7, 4}), mha, {},
                                       [&](std::string_view site, const Tensor& w) {
                                         ++calls;
                                         CHECK(site == "probe");
                                         const std::size_t nk = w.dim(w.rank() - 1);
                                         for (std::size_t i = 0; i < w.size() / nk; ++i) {
                                           double s = 0;
                                           for (std::size_t j = 0; j < nk; ++j) s += w[i * nk + j];
                                           CHECK(std::abs(s - 1.0) < 1e-9);
                                         }
                                       },
                                       "probe");
  CHECK(calls >= 1);
  CHECK(out.shape() == std::vector<std::size_t>{5, 8});
}

TEST_CASE("bilinear sampling is exact on linear fields") {
  const int h = 5, w = 7;
  Tensor map({2, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) map[(c * h + y) * w + x] = 0.5 + 1.5 * x - 0.25 * y + c;
  CounterRng r(64, 0);
  for (int t = 0; t < 200; ++t) {
    // inside the pixel-center hull
    const double px = r.uniform(0, w - 1), py = r.uniform(0, h - 1);
    const auto s = bilinear_sample(map, (px + 0.5) / w, (py + 0.5) / h);
    for (int c = 0; c < 2; ++c) CHECK(std::abs(s[c] - (0.5 + 1.5 * px - 0.25 * py + c)) < 1e-9);
  }
  // border clamp
  CHECK(bilinear_sample(map, -3.0, 0.0)[0] == doctest::Approx(0.5));
  const auto far = bilinear_sample(map, 5.0, 5.0);
  CHECK(far[0] == doctest::Approx(0.5 + 1.5 * (w - 1) - 0.25 * (h - 1)));
}

TEST_CASE("deformable aggregation") {
  CounterRng r(65, 0);
  const std::size_t nq = 6, heads = 2, points = 3, c = 4;
  const std::vector<Tensor> constant{Tensor({c, 4, 5}, 2.5), Tensor({c, 2, 3}, 2.5)};
  const Tensor refs = random_tensor(r, {nq, 2}, 0, 1);
  const Tensor offs = random_tensor(r, {nq, heads, 2, points, 2}, -3, 3);
  Tensor wts({nq, heads, 2, points});
  for (std::size_t i = 0; i < wts.size() / (2 * points); ++i) {
    const auto p = oracle::random_probs(r, 1, 2 * points);
    for (std::size_t j = 0; j < 2 * points; ++j) wts[i * 2 * points + j] = p[j];
  }
  const auto out = deformable_aggregate(constant, refs, offs, wts, heads);
  for (double v : out.values()) CHECK(v == doctest::Approx(2.5).epsilon(1e-12));

  // Random maps against the naive gather-and-sum loop.
  const std::vector<Tensor> maps{random_tensor(r, {c, 4, 5}), random_tensor(r, {c, 2, 3})};
  const auto got = deformable_aggregate(maps, refs, offs, wts, heads);
  for (std::size_t q = 0; q < nq; ++q)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t hd = ch / (c / heads);
      double s = 0;
      for (std::size_t l = 0; l < 2; ++l) {
        const int mh = static_cast<int>(maps[l].dim(1)), mw = static_cast<int>(maps[l].dim(2));
        for (std::size_t p = 0; p < points; ++p) {
          const std::size_t k = ((q * heads + hd) * 2 + l) * points + p;
          const double u = refs.at(q, 0) + offs[2 * k] / mw, v = refs.at(q, 1) + offs[2 * k + 1] / mh;
          s += wts[k] * oracle::bilinear(maps[l].values(), mh, mw, static_cast<int>(ch), u, v);
        }
      }
      CHECK(std::abs(got.at(q, ch) - s) < 1e-12);
    }

  // Zero offsets, one point of weight 1 at a pixel center.
  Tensor one_w({1, 1, 1, 1}, 1.0), zero_off({1, 1, 1, 1, 2});
  const Tensor ref({1, 2}, {(2 + 0.5) / 5, (1 + 0.5) / 4});
  const auto px = deformable_aggregate({maps[0]}, ref, zero_off, one_w, 1);
  for (std::size_t ch = 0; ch < c; ++ch) CHECK(px[ch] == doctest::Approx(maps[0][(ch * 4 + 1) * 5 + 2]).epsilon(1e-14));
}

TEST_CASE("deformable attention module") {
  ParamStore store(5);
  const auto attn = make_deformable(store, "d", 8, 4, 2, 4);
  CounterRng r(66, 0);
  const std::vector<Tensor> maps{random_tensor(r, {8, 6, 8}), random_tensor(r, {8, 3, 4})};
  const Tensor q = random_tensor(r, {10, 8}), refs = random_tensor(r, {10, 2}, 0, 1);
  int seen = 0;
  const auto a = deformable_attention_forward(attn, q, maps, refs, [&](std::string_view, const Tensor& w) {
    ++seen;
    const std::size_t last = w.dim(w.rank() - 1);
    for (std::size_t i = 0; i < w.size() / last; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < last; ++j) s += w[i * last + j];
      CHECK(std::abs(s - 1.0) < 1e-9);
    }
  });
  CHECK(seen == 1);
  CHECK(a == deformable_attention_forward(attn, q, maps, refs));
  CHECK_THROWS_AS(deformable_attention_forward(attn, q, {maps[0]}, refs), ShapeError);
}

TEST_CASE("conv3d against the nested-loop oracle") {
  CounterRng r(67, 0);
  for (int stride : {1, 2})
    for (int pad : {0, 1}) {
      const Tensor x = random_tensor(r, {2, 4, 4, 4});
      const Tensor k = random_tensor(r, {3, 2, 3, 3, 3});
      const Tensor b = random_tensor(r, {3});
      std::array<int, 4> ys{};
      const auto want = oracle::conv3d(x.values(), {2, 4, 4, 4}, k.values(), {3, 2, 3, 3, 3}, b.values(), stride, pad, ys);
      const auto got = conv3d_forward(x, k, b, stride, pad);
      REQUIRE(got.shape() == std::vector<std::size_t>{3, std::size_t(ys[1]), std::size_t(ys[2]), std::size_t(ys[3])});
      for (std::size_t i = 0; i < want.size(); ++i) CHECK(std::abs(got[i] - want[i]) < 1e-12);
    }
  const Tensor x = random_tensor(r, {2, 3, 4, 5});
  Tensor id({2, 2, 1, 1, 1});
  id[0] = id[3] = 1.0;
  CHECK(conv3d_forward(x, id, Tensor(), 1, 0) == x);

  ParamStore store(1);
  auto conv = make_conv3d(store, "c", 2, 2, 3, 1, 1);
  identity_init(conv);
  CHECK(conv3d_forward(x, conv) == x);
  CHECK_THROWS_AS(conv3d_forward(x, Tensor({2, 3, 1, 1, 1}), Tensor(), 1, 0), ShapeError);
}

TEST_CASE("trilinear upsampling") {
  const Tensor c({2, 2, 3, 2}, 1.75);
  const auto u = upsample_trilinear(c);
  CHECK(u.shape() == std::vector<std::size_t>{2, 4, 6, 4});
  for (double v : u.values()) CHECK(v == 1.75);

  const std::size_t n[3] = {3, 2, 4};
  Tensor lin({1, n[0], n[1], n[2]});
  for (std::size_t x = 0; x < n[0]; ++x)
    for (std::size_t y = 0; y < n[1]; ++y)
      for (std::size_t z = 0; z < n[2]; ++z) lin[(x * n[1] + y) * n[2] + z] = 1.0 + 2.0 * x - 0.5 * y + 0.25 * z;
  const auto up = upsample_trilinear(lin);
  for (std::size_t x = 0; x < 2 * n[0]; ++x)
    for (std::size_t y = 0; y < 2 * n[1]; ++y)
      for (std::size_t z = 0; z < 2 * n[2]; ++z) {
        const auto src = [&](std::size_t j, std::size_t m) { return static_cast<double>(j) * (m - 1) / (2 * m - 1); };
        const double want = 1.0 + 2.0 * src(x, n[0]) - 0.5 * src(y, n[1]) + 0.25 * src(z, n[2]);
        CHECK(std::abs(up[(x * 2 * n[1] + y) * 2 * n[2] + z] - want) < 1e-9);
      }
}

TEST_CASE("layer norm") {
  CounterRng r(68, 0);
  const Tensor flat({2, 4}, 3.0);
  const auto fz = layer_norm(flat, {}, {}, 1);
  for (double v : fz.values()) CHECK(v == 0.0);

  const Tensor x = random_tensor(r, {6, 9}, -3, 3);
  const auto y = layer_norm(x, {}, {}, 1);
  for (std::size_t i = 0; i < 6; ++i) {
    double m = 0, mi = 0, vi = 0, v = 0;
    for (std::size_t j = 0; j < 9; ++j) mi += x.at(i, j) / 9;
    for (std::size_t j = 0; j < 9; ++j) vi += (x.at(i, j) - mi) * (x.at(i, j) - mi) / 9;
    for (std::size_t j = 0; j < 9; ++j) m += y.at(i, j) / 9;
    for (std::size_t j = 0; j < 9; ++j) v += (y.at(i, j) - m) * (y.at(i, j) - m) / 9;
    CHECK(std::abs(m) < 1e-6);
    // eps = 1e-5 inside the square root shrinks the variance to s2 / (s2 + eps).
    CHECK(std::abs(v - vi / (vi + 1e-5)) < 1e-6);
  }
  Tensor shifted = x;
  for (double& v : shifted.data()) v += 7.5;
  const auto ys = layer_norm(shifted, {}, {}, 1);
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(ys[i] - y[i]) < 1e-9);

  // Along the channel axis of a volume.
  const Tensor vol = random_tensor(r, {4, 2, 2, 2});
  const auto vn = layer_norm(vol, std::vector<double>(4, 2.0), std::vector<double>(4, 1.0), 0);
  for (std::size_t s = 0; s < 8; ++s) {
    double m = 0;
    for (std::size_t c = 0; c < 4; ++c) m += vn[c * 8 + s] / 4;
    CHECK(m == doctest::Approx(1.0));
  }
  CHECK_THROWS_AS(layer_norm(Tensor({3, 1}), {}, {}, 1), ShapeError);
}

TEST_CASE("parameter store reproducibility and persistence") {
  const auto build = [](std::uint64_t seed, bool reverse) {
    ParamStore s(seed);
    if (reverse) {
      s.add("b", {2, 3}, Init::uniform_fan_in, 3);
      s.add("a", {4}, Init::uniform_fan_in, 4);
    } else {
      s.add("a", {4}, Init::uniform_fan_in, 4);
      s.add("b", {2, 3}, Init::uniform_fan_in, 3);
    }
    return s;
  };
  CHECK(build(9, false) == build(9, true));
  CHECK(!(build(9, false) == build(10, false)));
  const auto s = build(9, false);
  for (double v : s.get("b").values()) CHECK(std::abs(v) <= 1.0 / std::sqrt(3.0));
  CHECK(ParamStore::from_blob(s.blob(), s.manifest()) == s);
  CHECK(s.parameter_count() == 10);
  CHECK_THROWS(s.get("missing"));

  const Tensor t({2, 1, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(tensor_from_blob(tensor_blob(t)) == t);
}

TEST_CASE("toy encoder levels halve the image") {
  ParamStore store(2);
  const auto enc = make_toy_encoder(store, "e", 2, 6, 2);
  CounterRng r(69, 0);
  const auto levels = toy_encoder_forward(enc, random_tensor(r, {2, 16, 32}));
  REQUIRE(levels.size() == 2);
  CHECK(levels[0].shape() == std::vector<std::size_t>{6, 8, 16});
  CHECK(levels[1].shape() == std::vector<std::size_t>{6, 4, 8});
}
