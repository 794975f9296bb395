#include <doctest.h>

#include <filesystem>

#include "hsocc/errors.hpp"
#include "hsocc/kitti_io.hpp"
#include "oracles.hpp"

using namespace hsocc;

TEST_CASE("packed bit grids decode MSB first in linear index order") {
  GridSpec s;
  s.dims = {2, 2, 4};
  std::vector<std::uint8_t> bytes{0b10000001, 0b01000000};
  const auto g = read_packed_bitgrid(bytes, s);
  CHECK(g.occupied[0] == 1);
  CHECK(g.occupied[7] == 1);
  CHECK(g.occupied[9] == 1);
  CHECK(std::count(g.occupied.begin(), g.occupied.end(), 1) == 3);
  CHECK(write_packed_bitgrid(g) == bytes);
  CHECK_THROWS_AS(read_packed_bitgrid(std::vector<std::uint8_t>(3), s), FormatError);
}

TEST_CASE("packed grids round-trip and match the per-bit oracle") {
  CounterRng r(21, 0);
  GridSpec s;
  s.dims = {8, 4, 8};
  for (int t = 0; t < 50; ++t) {
    std::vector<std::uint8_t> bytes(s.voxel_count() / 8);
    for (auto& b : bytes) b = static_cast<std::uint8_t>(r.below(256));
    const auto g = read_packed_bitgrid(bytes, s);
    CHECK(g.occupied == oracle::unpack_bits(bytes));
    CHECK(write_packed_bitgrid(g) == bytes);
  }
}

TEST_CASE("label grids round-trip through the writer") {
  CounterRng r(22, 0);
  auto g = oracle::random_grid(r, {4, 4, 4}, 20, 0.1);
  for (std::size_t i = 0; i < g.size(); ++i)
    if (g.valid[i] == 0) g.labels[i] = 0;
  const auto bytes = write_label_grid(g);
  const auto back = read_label_grid(bytes, g.spec, RemapTable::identity(20));
  CHECK(back == g);
}

TEST_CASE("remap table applies the learning map") {
  const auto t = RemapTable::from_json(R"({"num_classes": 3, "learning_map": {"0": 0, "10": 1, "40": 2, "1": -1},
                                          "invalid": [255], "class_names": ["empty", "car", "road"]})");
  CHECK(t.lookup(10) == 1);
  CHECK(t.lookup(40) == 2);
  CHECK(t.lookup(1) == RemapTable::kInvalid);
  CHECK(t.lookup(255) == RemapTable::kInvalid);
  CHECK(t.lookup(7) == RemapTable::kUnmapped);
  CHECK(t.class_names().size() == 3);
  GridSpec s;
  s.dims = {1, 1, 2};
  const std::vector<std::uint8_t> raw{40, 0, 7, 0};
  CHECK_THROWS_AS(read_label_grid(raw, s, t), FormatError);
  CHECK_THROWS(RemapTable::from_json(R"({"num_classes": 3, "learning_map": {}, "bogus": 1})"));
  CHECK_THROWS(RemapTable::from_json(R"({"num_classes": 3, "learning_map": {"5": 3}})"));
}

TEST_CASE("bundled SemanticKITTI remap loads") {
  const auto t = RemapTable::load(std::filesystem::path(HSOCC_SOURCE_DIR) / "data/semantic_kitti_remap.json");
  CHECK(t.num_classes() == 20);
  CHECK(t.lookup(10) == 1);   // car
  CHECK(t.lookup(40) == 9);   // road
  CHECK(t.lookup(252) == 1);  // moving car
  CHECK(t.class_names() == semantic_kitti_class_names());
}

TEST_CASE("invalid mask and occupancy") {
  GridSpec s;
  s.dims = {2, 2, 2};
  SemanticGrid g(s, 3);
  g.labels[1] = 2;
  g.labels[2] = 1;
  OccupancyGrid inv{s, std::vector<std::uint8_t>(8, 0)};
  inv.occupied[2] = 1;
  apply_invalid_mask(g, inv);
  CHECK(g.valid[2] == 0);
  const auto occ = occupancy_of(g);
  CHECK(occ.occupied == std::vector<std::uint8_t>{0, 1, 0, 0, 0, 0, 0, 0});
}

TEST_CASE("calibration parsing") {
  const std::string text =
      "P0: 7.07e+02 0 6.04e+02 0 0 7.07e+02 1.8e+02 0 0 0 1 0\n"
      "P2: 7.070912e+02 0.000000e+00 6.018873e+02 4.688783e+01 0.000000e+00 7.070912e+02 1.831104e+02 "
      "1.178601e-01 0.000000e+00 0.000000e+00 1.000000e+00 6.203223e-03\n"
      "Tr: 0 -1 0 0 0 0 -1 0 1 0 0 -0.27\n";
  const auto c = parse_calibration(text);
  CHECK(c.p2(0, 0) == doctest::Approx(707.0912));
  CHECK(c.p2(0, 3) == doctest::Approx(46.88783));
  CHECK(c.tr(2, 3) == doctest::Approx(-0.27));
  const auto rig = read_calibration(text);
  CHECK(rig.width == 1226);
  CHECK(rig.height == 370);
  CHECK_THROWS_AS(parse_calibration("P2: 1 2 3\n"), FormatError);
  CHECK_THROWS_AS(parse_calibration("P0: 1 0 0 0 0 1 0 0 0 0 1 0\n"), FormatError);
}

TEST_CASE("depth PNG round trip at 1/256 m resolution") {
  DepthMap d(5, 3);
  for (int v = 0; v < 3; ++v)
    for (int u = 0; u < 5; ++u) d.at(u, v) = (u + 5 * v) * 0.25;
  const auto png = write_depth_map(d);
  const auto back = read_depth_map(png);
  CHECK(back.width == 5);
  CHECK(back.height == 3);
  CHECK(back.depth == d.depth);
  CHECK_THROWS_AS(read_depth_map(std::vector<std::uint8_t>{1, 2, 3, 4}), FormatError);
}

TEST_CASE("LiDAR point files") {
  PointCloud c;
  c.points = {{1.5f, -2.0f, 0.25f, 0.5f}, {10.0f, 0.0f, -1.75f, 0.0f}};
  const auto bytes = write_lidar_points(c);
  CHECK(bytes.size() == 32);
  const auto back = read_lidar_points(bytes);
  REQUIRE(back.points.size() == 2);
  CHECK(back.points[0].x == 1.5f);
  CHECK(back.points[1].z == -1.75f);
  CHECK_THROWS_AS(read_lidar_points(std::vector<std::uint8_t>(17)), FormatError);
}
