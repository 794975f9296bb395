#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hsocc/errors.hpp"
#include "hsocc/hss.hpp"
#include "oracles.hpp"

using namespace hsocc;
using namespace hsocc::hss;
using losses::VoxelMatrix;

TEST_CASE("top-K picks the largest scores") {
  const std::vector<double> s{0.9, 0.1, 0.5};
  const auto sel = select_topk(s, 2, {});
  CHECK(sel.indices == std::vector<std::size_t>{0, 2});
  CHECK(sel.scores == std::vector<double>{0.9, 0.5});

  const std::vector<double> eq(5, 0.3);
  CHECK(select_topk(eq, 2, {}).indices == std::vector<std::size_t>{0, 1});
}

TEST_CASE("top-K respects the candidate mask and rejects oversized K") {
  const std::vector<double> s{0.9, 0.1, 0.5, 0.7};
  const std::vector<std::uint8_t> m{0, 1, 1, 0};
  CHECK(select_topk(s, 2, m).indices == std::vector<std::size_t>{2, 1});
  CHECK_THROWS_AS(select_topk(s, 3, m), ValidationError);
  CHECK(select_topk(s, 0, m).k() == 0);
  const std::vector<double> nan{0.1, std::nan("")};
  CHECK_THROWS_AS(select_topk(nan, 1, {}), ValidationError);
}

TEST_CASE("top-K equals a full-sort oracle") {
  CounterRng r(51, 0);
  const std::size_t n = 100000;
  std::vector<double> s(n);
  std::vector<std::uint8_t> m(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = std::floor(r.uniform(0, 1000)) / 1000.0;  // many ties
    m[i] = r.below(5) != 0;
  }
  std::vector<std::size_t> all;
  for (std::size_t i = 0; i < n; ++i)
    if (m[i]) all.push_back(i);
  std::stable_sort(all.begin(), all.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  for (std::size_t k : {std::size_t{1}, std::size_t{777}, std::size_t{15000}, all.size()}) {
    const auto sel = select_topk(s, k, m);
    REQUIRE(sel.k() == k);
    CHECK(std::equal(sel.indices.begin(), sel.indices.end(), all.begin()));
  }
}

TEST_CASE("entropy scores") {
  const std::vector<double> lg{0, 0, 100, 0};
  const auto h = entropy_scores(VoxelMatrix(lg, 2, 2));
  CHECK(h[0] == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(h[1] < 1e-40);

  CounterRng r(52, 0);
  for (int t = 0; t < 50; ++t) {
    const std::size_t c = 2 + r.below(10);
    std::vector<double> uni(c, 0.7);
    const auto lgr = oracle::random_vector(r, c, -2, 2);
    const double hu = entropy_scores(VoxelMatrix(uni, 1, c))[0];
    CHECK(hu == doctest::Approx(std::log(static_cast<double>(c))).epsilon(1e-13));
    CHECK(entropy_scores(VoxelMatrix(lgr, 1, c))[0] <= hu + 1e-12);
  }
}

TEST_CASE("octant order and child label gathering") {
  CHECK(octant_offset(7) == std::array<int, 3>{1, 1, 1});
  CHECK(octant_offset(4) == std::array<int, 3>{1, 0, 0});
  CHECK(octant_offset(1) == std::array<int, 3>{0, 0, 1});

  CounterRng r(53, 0);
  const auto full = oracle::random_grid(r, {8, 6, 4}, 5, 0.2);
  const GridSpec low = full.spec.coarsened(1);
  SelectionSet sel;
  for (std::size_t i = 0; i < low.voxel_count(); i += 3) {
    sel.indices.push_back(i);
    sel.scores.push_back(0.0);
  }
  const auto got = gather_child_labels(full, sel);
  REQUIRE(got.labels.size() == 8 * sel.k());
  for (std::size_t j = 0; j < sel.k(); ++j) {
    const auto [x, y, z] = low.coords(sel.indices[j]);
    int o = 0;
    for (int dx = 0; dx < 2; ++dx)
      for (int dy = 0; dy < 2; ++dy)
        for (int dz = 0; dz < 2; ++dz, ++o) {
          const auto f = full.spec.linear_index(2 * x + dx, 2 * y + dy, 2 * z + dz);
          CHECK(got.labels[8 * j + o] == full.labels[f]);
          CHECK(got.valid[8 * j + o] == full.valid[f]);
        }
  }
}

TEST_CASE("subdivision through the split head") {
  const std::size_t c = 3;
  nn::Mlp copy;
  copy.hidden = nn::Activation::identity;
  nn::Linear l{nn::Tensor({8 * c, c}), nn::Tensor({8 * c})};
  for (std::size_t o = 0; o < 8; ++o)
    for (std::size_t k = 0; k < c; ++k) l.weight.at(o * c + k, k) = 1.0;
  copy.layers.push_back(l);

  const nn::Tensor feats({4, c}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
  SelectionSet sel{{3, 1}, {0.9, 0.8}};
  const auto hv = subdivide_selected(feats, sel, copy);
  REQUIRE(hv.features.dim(0) == 16);
  for (std::size_t row = 0; row < 16; ++row) {
    CHECK(hv.parent[row] == sel.indices[row / 8]);
    CHECK(hv.octant[row] == row % 8);
    for (std::size_t k = 0; k < c; ++k) CHECK(hv.features.at(row, k) == feats.at(hv.parent[row], k));
  }
  CHECK(subdivide_selected(feats, SelectionSet{}, copy).features.size() == 0);

  nn::ParamStore store(1);
  const auto bad = make_split_heads(store, "x", 4);
  CHECK_THROWS(subdivide_selected(feats, sel, bad.feature));
}

TEST_CASE("recombination with an empty selection is nearest upsampling") {
  CounterRng r(54, 0);
  const GridSpec low{{3, 4, 2}, 0.4, {0, 0, 0}};
  const std::size_t c = 4;
  const auto lg = oracle::random_vector(r, low.voxel_count() * c);
  SemanticGrid low_pred(low, c);
  for (std::size_t i = 0; i < low.voxel_count(); ++i) {
    const auto* row = lg.data() + i * c;
    low_pred.labels[i] = static_cast<Label>(std::max_element(row, row + c) - row);
  }
  const std::vector<double> none;
  const auto rec = recombine_predictions(VoxelMatrix(lg, low.voxel_count(), c), VoxelMatrix(none, 0, c),
                                         SelectionSet{}, low);
  CHECK(rec.labels == nearest_upsample(low_pred, 1).labels);
  CHECK(rec.spec.dims == std::array<int, 3>{6, 8, 4});
}

TEST_CASE("one selected parent changes exactly the favored child") {
  const GridSpec low{{2, 2, 2}, 0.4, {0, 0, 0}};
  const std::size_t c = 3;
  std::vector<double> lg(8 * c, 0.0);
  for (std::size_t i = 0; i < 8; ++i) lg[i * c] = 1.0;  // all free
  std::vector<double> hi(8 * c, 0.0);
  for (std::size_t o = 0; o < 8; ++o) hi[o * c] = 1.0;
  hi[3 * c + 2] = 5.0;
  const SelectionSet sel{{5}, {1.0}};
  const auto rec = recombine_predictions(VoxelMatrix(lg, 8, c), VoxelMatrix(hi, 8, c), sel, low);
  CHECK(std::count(rec.labels.begin(), rec.labels.end(), Label{2}) == 1);
  const auto [x, y, z] = low.coords(5);
  CHECK(rec.labels[rec.spec.linear_index(2 * x, 2 * y + 1, 2 * z + 1)] == 2);

  // Ties go to the smaller class.
  std::vector<double> tie(8 * c, 0.0);
  const auto t = recombine_predictions(VoxelMatrix(tie, 8, c), VoxelMatrix(tie, 8, c), sel, low);
  CHECK(std::all_of(t.labels.begin(), t.labels.end(), [](Label l) { return l == 0; }));
}

TEST_CASE("perfect high logits on all split parents reconstruct the ground truth") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const GridSpec spec{{20, 20, 8}, 0.2, {0, 0, 0}};
    const auto gt = generate_synthetic_scene(spec, 6, 0.2, seed);
    const auto hist = build_histogram_pyramid(gt, 1)[0];
    const auto mask = subdivision_mask(hist);
    const auto sel = select_split_parents(mask);
    const std::size_t c = 6;
    std::vector<double> lg(hist.size() * c, 0.0);
    for (std::size_t i = 0; i < hist.size(); ++i) lg[i * c + std::distance(hist.row(i).begin(), std::max_element(hist.row(i).begin(), hist.row(i).end()))] = 1.0;
    const auto child = gather_child_labels(gt, sel);
    std::vector<double> hi(child.labels.size() * c, 0.0);
    for (std::size_t j = 0; j < child.labels.size(); ++j) hi[j * c + child.labels[j]] = 1.0;
    const auto rec = recombine_predictions(VoxelMatrix(lg, hist.size(), c), VoxelMatrix(hi, child.labels.size(), c),
                                           sel, hist.spec);
    CHECK(rec.labels == gt.labels);
    CHECK(subdivision_recall(sel, mask) == 1.0);
  }
}

TEST_CASE("subdivision recall") {
  SubdivisionMask m;
  m.spec.dims = {4, 1, 1};
  m.requires_split = {1, 1, 0, 0};
  m.defined = {1, 1, 1, 1};
  CHECK(subdivision_recall(SelectionSet{{0, 2}, {1, 1}}, m) == 0.5);
  CHECK(subdivision_recall(SelectionSet{{1, 0, 3}, {1, 1, 1}}, m) == 1.0);
  m.requires_split = {0, 0, 0, 0};
  CHECK(subdivision_recall(SelectionSet{}, m) == 1.0);
}

TEST_CASE("selection JSON round trip") {
  const SelectionSet s{{9, 4, 1}, {0.75, 0.5, 0.125}};
  const auto back = selection_from_json(to_json(s));
  CHECK(back.indices == s.indices);
  CHECK(back.scores == s.scores);
  CHECK_THROWS_AS(selection_from_json("{\"k\":2,\"indices\":[1],\"scores\":[0.5]}"), FormatError);
  CHECK_THROWS_AS(selection_from_json("nope"), FormatError);
}

TEST_CASE("supervision cost model") {
  const auto c = supervision_cost(15000, semantic_kitti_spec(), 32, 20);
  CHECK(c.high_voxels == 120000);
  CHECK(c.low_voxels == 128 * 128 * 16);
  CHECK(c.memory_touch_ratio == doctest::Approx((120000.0 + 262144.0) / 2097152.0));
  CHECK(c.memory_touch_ratio == doctest::Approx(0.1822).epsilon(1e-3));
  CHECK(c.dense_bytes == 2097152u * 32 * 4);
  CHECK(c.hierarchical_flops < c.dense_flops);
  CHECK_THROWS_AS(supervision_cost(262145, semantic_kitti_spec(), 32, 20), ValidationError);
}

TEST_CASE("learned split scores lie in (0, 1) and are deterministic") {
  nn::ParamStore a(7), b(7);
  const auto ha = make_split_heads(a, "hss", 8);
  const auto hb = make_split_heads(b, "hss", 8);
  CounterRng r(55, 0);
  const nn::Tensor f({50, 8}, oracle::random_vector(r, 400));
  const auto sa = learned_split_scores(f, ha.score);
  CHECK(sa == learned_split_scores(f, hb.score));
  for (double s : sa) CHECK((s > 0.0 && s < 1.0));
  CHECK(a.contains("hss.split_score.0.weight"));
}
