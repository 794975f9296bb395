#include <doctest.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "hsocc/cli/cli.hpp"
#include "hsocc/cli/commands.hpp"
#include "hsocc/errors.hpp"
#include "hsocc/kitti_io.hpp"

using namespace hsocc;
using namespace hsocc::cli;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "hsocc");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  const int code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("hsocc_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

void write_frame(const fs::path& dir, const std::string& id, const SemanticGrid& g) {
  write_file(dir / (id + ".label"), write_label_grid(g));
  OccupancyGrid inv{g.spec, std::vector<std::uint8_t>(g.size(), 0)};
  for (std::size_t i = 0; i < g.size(); ++i) inv.occupied[i] = g.valid[i] ? 0 : 1;
  write_file(dir / (id + ".invalid"), write_packed_bitgrid(inv));
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> f;
  std::stringstream ss(line);
  for (std::string cell; std::getline(ss, cell, sep);) f.push_back(cell);
  return f;
}

const std::string kLineConfig = R"({"grid": {"dims": [2, 2, 2]}, "num_classes": 3})";

}  // namespace

TEST_CASE("config parsing") {
  const auto c = parse_config(R"({"k": 7, "loss": {"lambda2": 0.5}, "grid": {"dims": [8, 8, 4]}})");
  CHECK(c.k == 7);
  CHECK(c.loss.lambda1 == 1.0);
  CHECK(c.loss.lambda2 == 0.5);
  CHECK(c.grid.dims == std::array<int, 3>{8, 8, 4});
  CHECK(RunConfig{}.k == 15000);
  CHECK(RunConfig{}.loss.lambda2 == doctest::Approx(0.3));
  CHECK_THROWS_AS(parse_config(R"({"kay": 7})"), ValidationError);
  CHECK_THROWS_AS(parse_config(R"({"loss": {"lambda3": 1}})"), ValidationError);
  CHECK_THROWS_AS(parse_config(R"({"decoder": {"heads": 3}})"), ValidationError);
  CHECK_THROWS_AS(parse_config(R"({"selection_rule": "random"})"), ValidationError);
  CHECK_THROWS_AS(parse_config("{"), ValidationError);
}

TEST_CASE("stats on a planted-heterogeneity fixture") {
  const auto dir = scratch("stats");
  const GridSpec spec{{40, 40, 16}, 0.2, {0, 0, 0}};
  for (int f = 0; f < 3; ++f) write_frame(dir, "00000" + std::to_string(f), generate_synthetic_scene(spec, 20, 0.1, f));
  write_text(dir / "cfg.json", R"({"grid": {"dims": [40, 40, 16]}})");
  const auto r = run_cli({"stats", dir.string(), "--config", (dir / "cfg.json").string(), "--workers", "2"});
  REQUIRE(r.code == 0);
  std::istringstream lines(r.out);
  std::string header;
  std::getline(lines, header);
  CHECK(header + "\n" == stats_csv_header(20));
  const auto cols = split(header, ',');
  const auto col = std::find(cols.begin(), cols.end(), "homogeneous_fraction") - cols.begin();
  int rows = 0;
  for (std::string line; std::getline(lines, line);) {
    const auto f = split(line, ',');
    CHECK(f[static_cast<std::size_t>(col)] == "0.900000");
    ++rows;
  }
  CHECK(rows == 4);  // 3 frames + ALL

  const auto again = run_cli({"stats", dir.string(), "--config", (dir / "cfg.json").string()});
  CHECK(again.out == r.out);

  const auto out_file = dir / "stats.csv";
  CHECK(run_cli({"stats", dir.string(), "--config", (dir / "cfg.json").string(), "--out", out_file.string()}).code == 0);
  CHECK(read_text_file(out_file) == r.out);
}

TEST_CASE("stats error handling") {
  const auto empty = scratch("stats_empty");
  CHECK(run_cli({"stats", empty.string()}).code == 2);

  const auto dir = scratch("stats_bad");
  write_text(dir / "cfg.json", kLineConfig);
  GridSpec spec;
  spec.dims = {2, 2, 2};
  SemanticGrid g(spec, 3);
  g.labels = {1, 1, 2, 0, 0, 0, 0, 0};
  write_frame(dir, "a", g);
  write_text(dir / "b.label", "xx");
  write_text(dir / "b.invalid", "x");
  const auto r = run_cli({"stats", dir.string(), "--config", (dir / "cfg.json").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("b") != std::string::npos);
  CHECK(r.out.find("\na,1,") != std::string::npos);
}

TEST_CASE("eval") {
  const auto gt = scratch("eval_gt"), pred = scratch("eval_pred");
  write_text(gt / "cfg.json", kLineConfig);
  const std::string cfg = (gt / "cfg.json").string();
  GridSpec spec;
  spec.dims = {2, 2, 2};
  SemanticGrid g(spec, 3), p(spec, 3);
  g.labels = {1, 1, 2, 0, 0, 0, 0, 0};
  p.labels = {1, 2, 2, 0, 0, 0, 0, 0};
  write_frame(gt, "000000", g);
  write_file(pred / "000000.label", write_label_grid(p));

  auto r = run_cli({"eval", gt.string(), gt.string(), "--config", cfg});
  CHECK(r.code == 0);
  CHECK(nlohmann::json::parse(r.out.substr(r.out.find('{')))["miou"].get<double>() == 1.0);

  const auto report = gt / "report.json";
  r = run_cli({"eval", pred.string(), gt.string(), "--config", cfg, "--out", report.string()});
  CHECK(r.code == 0);
  const auto j = nlohmann::json::parse(read_text_file(report));
  CHECK(j["miou"].get<double>() == 0.5);
  CHECK(j["iou_occupancy"].get<double>() == 1.0);
  CHECK(r.out.find("mIoU") != std::string::npos);

  write_file(pred / "000001.label", write_label_grid(p));
  r = run_cli({"eval", pred.string(), gt.string(), "--config", cfg, "--out", report.string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("000001") != std::string::npos);
  CHECK(nlohmann::json::parse(read_text_file(report))["miou"].get<double>() == 0.5);
}

TEST_CASE("gradcheck") {
  auto r = run_cli({"gradcheck", "--trials", "10"});
  CHECK(r.code == 0);
  CHECK(r.out.find("FAIL") == std::string::npos);
  const auto again = run_cli({"gradcheck", "--trials", "10"});
  CHECK(again.out == r.out);

  r = run_cli({"gradcheck", "--trials", "10", "--corrupt-gradient", "split_bce"});
  CHECK(r.code == 1);
  CHECK(r.out.find("FAIL") != std::string::npos);
  CHECK(run_cli({"gradcheck", "--corrupt-gradient", "nope"}).code == 2);

  GradcheckOptions opt;
  opt.trials = 5;
  for (const auto& row : run_gradcheck(opt)) {
    CHECK(row.pass);
    CHECK(row.max_rel_error <= 1e-4);
  }
}

TEST_CASE("demo") {
  const auto t0 = std::chrono::steady_clock::now();
  const auto a = run_demo(RunConfig::toy());
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(secs < 60.0);
  const auto low = RunConfig::toy().grid.coarsened(1);
  for (int ax = 0; ax < 3; ++ax) CHECK(a.prediction.spec.dims[ax] == 2 * low.dims[ax]);
  CHECK(a.prediction.spec.dims == RunConfig::toy().grid.dims);
  CHECK(a.selection.k() == 128);
  CHECK(std::isfinite(a.loss.total));
  CHECK((a.subdivision_recall >= 0.0 && a.subdivision_recall <= 1.0));

  const auto b = run_demo(RunConfig::toy());
  CHECK(b.prediction.labels == a.prediction.labels);
  CHECK(b.summary_json == a.summary_json);

  auto ent = RunConfig::toy();
  ent.rule = SelectionRule::entropy;
  const auto e = run_demo(ent);
  CHECK(e.selection.indices != a.selection.indices);
  CHECK(nlohmann::json::parse(e.summary_json)["selection_rule"] == "entropy");

  const auto dir = scratch("demo");
  const auto r = run_cli({"demo", "--out", dir.string(), "--rule", "entropy"});
  CHECK(r.code == 0);
  for (const char* f : {"prediction.label", "prediction.bin", "ground_truth.label", "q_low.tensor", "summary.json"})
    CHECK(fs::exists(dir / f));
  CHECK(read_text_file(dir / "summary.json") == e.summary_json);
  CHECK(run_cli({"demo", "--rule", "random"}).code == 2);
}

TEST_CASE("bench") {
  auto r = run_cli({"bench", "--k", "15000", "--out", (scratch("bench") / "b.json").string()});
  CHECK(r.code == 0);
  const auto j = nlohmann::json::parse(read_text_file(fs::temp_directory_path() / "hsocc_test_cli_bench" / "b.json"));
  CHECK(j["memory_touch_ratio"].get<double>() == doctest::Approx(0.1822).epsilon(1e-3));
  r = run_cli({"bench", "--k", "0"});
  CHECK(r.code == 0);
  CHECK(nlohmann::json::parse(r.out.substr(r.out.find('{')))["memory_touch_ratio"].get<double>() == 0.125);
  CHECK(run_cli({"bench", "--k", "300000"}).code == 2);
}

TEST_CASE("invocation errors") {
  CHECK(run_cli({}).code == 2);
  CHECK(run_cli({"frobnicate"}).code == 2);
  CHECK(run_cli({"bench", "--k", "many"}).code == 2);
  CHECK(run_cli({"--help"}).code == 0);
  CHECK(run_cli({"bench", "--config", "/nonexistent/cfg.json"}).code == 2);
}

TEST_CASE("installed tool runs") {
  const std::string cmd = std::string("\"") + HSOCC_TOOL_PATH + "\" bench --k 0 > /dev/null";
  CHECK(std::system(cmd.c_str()) == 0);
}
