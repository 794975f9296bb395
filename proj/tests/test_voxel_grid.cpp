#include <doctest.h>

#include "hsocc/errors.hpp"
#include "hsocc/voxel_grid.hpp"
#include "oracles.hpp"

using namespace hsocc;

TEST_CASE("linear index is x-major, z-fastest and round-trips coords") {
  GridSpec s;
  s.dims = {4, 3, 5};
  CHECK(s.linear_index(0, 0, 1) == 1);
  CHECK(s.linear_index(0, 1, 0) == 5);
  CHECK(s.linear_index(1, 0, 0) == 15);
  for (std::size_t i = 0; i < s.voxel_count(); ++i) {
    const auto c = s.coords(i);
    CHECK(s.linear_index(c[0], c[1], c[2]) == i);
  }
}

TEST_CASE("coarsening keeps the physical volume and rejects odd dims") {
  const GridSpec k = semantic_kitti_spec();
  CHECK(k.dims == std::array<int, 3>{256, 256, 32});
  const GridSpec low = k.coarsened(1);
  CHECK(low.dims == std::array<int, 3>{128, 128, 16});
  CHECK(low.voxel_size == doctest::Approx(0.4));
  CHECK(low.extent()[0] == doctest::Approx(k.extent()[0]));
  CHECK(low.refined() == k);
  GridSpec odd;
  odd.dims = {6, 6, 3};
  CHECK_THROWS_AS(odd.coarsened(1), DimensionError);
}

TEST_CASE("pyramid equals the brute-force tally") {
  CounterRng r(11, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const auto g = oracle::random_grid(r, {8, 8, 4}, 5, 0.2, trial % 2 == 0 ? 2 : 0);
    const auto pyr = build_histogram_pyramid(g, 2);
    REQUIRE(pyr.size() == 2);
    for (int l = 1; l <= 2; ++l) {
      const auto t = oracle::tally(g, l);
      CHECK(pyr[l - 1].level == l);
      CHECK(pyr[l - 1].fractions == t.fractions);
      CHECK(pyr[l - 1].defined == t.defined);
    }
  }
}

TEST_CASE("subdivision mask marks multi-class blocks only") {
  GridSpec s;
  s.dims = {4, 2, 2};
  SemanticGrid g(s, 3);
  // Block 0 homogeneous class 0; block 1 has one child of class 2.
  g.labels[s.linear_index(3, 1, 1)] = 2;
  const auto mask = subdivision_mask(build_histogram_pyramid(g, 1)[0]);
  CHECK(mask.requires_split == std::vector<std::uint8_t>{0, 1});
  CHECK(mask.split_count() == 1);
  // An invalid child does not count as a class of its own.
  g.valid[s.linear_index(3, 1, 1)] = 0;
  const auto mask2 = subdivision_mask(build_histogram_pyramid(g, 1)[0]);
  CHECK(mask2.split_count() == 0);
}

TEST_CASE("fully invalid blocks are undefined") {
  GridSpec s;
  s.dims = {2, 2, 2};
  SemanticGrid g(s, 2);
  std::fill(g.valid.begin(), g.valid.end(), 0);
  const auto pyr = build_histogram_pyramid(g, 1);
  CHECK(pyr[0].defined[0] == 0);
  const auto st = homogeneity_stats(g, 1);
  CHECK(st[0].total_defined == 0);
  CHECK(st[0].homogeneous_fraction == 1.0);
  const auto low = majority_downsample(g, 1);
  CHECK(low.valid[0] == 0);
}

TEST_CASE("majority downsample breaks ties toward the smaller class") {
  GridSpec s;
  s.dims = {2, 2, 2};
  SemanticGrid g(s, 4);
  for (std::size_t i = 0; i < 8; ++i) g.labels[i] = i < 4 ? 3 : 1;
  CHECK(majority_downsample(g, 1).labels[0] == 1);
}

TEST_CASE("nearest upsample inverts majority downsample on homogeneous grids") {
  CounterRng r(5, 0);
  const auto low = oracle::random_grid(r, {4, 4, 2}, 6);
  const auto hi = nearest_upsample(low, 1);
  CHECK(hi.spec.dims == std::array<int, 3>{8, 8, 4});
  CHECK(majority_downsample(hi, 1).labels == low.labels);
  CHECK(homogeneity_stats(hi, 1)[0].requires_split == 0);
}

TEST_CASE("synthetic scenes plant exactly the requested heterogeneity") {
  GridSpec s;
  s.dims = {40, 40, 16};
  for (double q : {0.0, 0.1, 0.25, 0.5, 1.0}) {
    for (std::uint64_t seed : {1u, 2u}) {
      const auto g = generate_synthetic_scene(s, 20, q, seed);
      const auto st = homogeneity_stats(g, 1)[0];
      CHECK(st.total_defined == 3200);
      CHECK(st.homogeneous_fraction == 1.0 - q);
    }
  }
  CHECK(generate_synthetic_scene(s, 20, 0.1, 7) == generate_synthetic_scene(s, 20, 0.1, 7));
  CHECK_THROWS_AS(generate_synthetic_scene(s, 20, 1.5, 7), ValidationError);
}

TEST_CASE("validate rejects out-of-range labels") {
  GridSpec s;
  s.dims = {2, 2, 2};
  SemanticGrid g(s, 3);
  g.labels[0] = 3;
  CHECK_THROWS(g.validate());
}
