#include "hsocc/cli/cli.hpp"

#include <CLI11.hpp>
#include <iostream>
#include <optional>

#include "hsocc/cli/commands.hpp"
#include "hsocc/errors.hpp"

namespace hsocc::cli {

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hierarchical occupancy supervision toolkit"};
  app.require_subcommand(1);

  std::string config_path, rule, out_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> k, workers;
  std::optional<int> level;
  std::size_t trials = 100;
  std::string corrupt;
  std::string data_dir, pred_dir, gt_dir;

  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "random seed");
    sub->add_option("--out", out_path, "output file or directory");
  };

  auto* stats = app.add_subcommand("stats", "homogeneity statistics of .label/.invalid frames (CSV)");
  common(stats);
  stats->add_option("data_dir", data_dir, "directory of .label/.invalid pairs")->required();
  stats->add_option("--level", level, "deepest pyramid level")->check(CLI::PositiveNumber);
  stats->add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);

  auto* eval = app.add_subcommand("eval", "IoU / mIoU of predicted against ground-truth frames");
  common(eval);
  eval->add_option("pred_dir", pred_dir, "directory of predicted .label files")->required();
  eval->add_option("gt_dir", gt_dir, "directory of ground-truth .label (+ .invalid) files")->required();
  eval->add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every loss gradient");
  common(grad);
  grad->add_option("--trials", trials, "instances per loss")->check(CLI::PositiveNumber);
  grad->add_option("--corrupt-gradient", corrupt)->group("");

  auto* demo = app.add_subcommand("demo", "synthetic end-to-end hierarchical prediction");
  common(demo);
  demo->add_option("--k", k, "number of subdivided voxels");
  demo->add_option("--rule", rule, "selection rule")->check(CLI::IsMember({"learned", "entropy"}));

  auto* bench = app.add_subcommand("bench", "dense versus hierarchical supervision cost");
  common(bench);
  bench->add_option("--k", k, "number of subdivided voxels");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kSuccess : kInvalidInvocation;
  }

  try {
    RunConfig cfg = demo->parsed() ? RunConfig::toy() : RunConfig{};
    if (!config_path.empty()) cfg = load_config(config_path, cfg);
    if (seed) cfg.seed = *seed;
    if (k) cfg.k = *k;
    if (level) cfg.levels = *level;
    if (workers) cfg.workers = *workers;
    if (!rule.empty()) cfg.rule = parse_rule(rule);
    cfg.validate();

    if (stats->parsed()) return cmd_stats(cfg, data_dir, out_path, out, err);
    if (eval->parsed()) return cmd_eval(cfg, pred_dir, gt_dir, out_path, out, err);
    if (grad->parsed()) {
      GradcheckOptions opt;
      opt.seed = cfg.seed;
      opt.trials = trials;
      opt.corrupt = corrupt;
      return cmd_gradcheck(opt, out_path, out, err);
    }
    if (demo->parsed()) return cmd_demo(cfg, out_path, out, err);
    if (bench->parsed()) return cmd_bench(cfg, out_path, out, err);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kInvalidInvocation;
  } catch (const DimensionError& e) {
    err << "error: " << e.what() << '\n';
    return kInvalidInvocation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kPartialFailure;
  }
  return kInvalidInvocation;
}

}  // namespace hsocc::cli
