#pragma once

// Subcommand implementations. Each returns a process exit code and writes
// its report to `out` (plus the --out file when given); diagnostics go to `err`.

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "hsocc/cli/config.hpp"
#include "hsocc/cli/gradcheck.hpp"
#include "hsocc/hss.hpp"
#include "hsocc/losses.hpp"
#include "hsocc/metrics.hpp"

namespace hsocc::cli {

enum ExitCode : int { kSuccess = 0, kPartialFailure = 1, kInvalidInvocation = 2 };

namespace fs = std::filesystem;

/// Runs fn(i) for i in [0, n) on `workers` threads.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

/// stats CSV columns:
///   frame, level, dim_x, dim_y, dim_z, total_voxels, defined_voxels,
///   requires_split, requires_split_fraction, homogeneous_fraction,
///   homogeneous_fraction_all, class_0 .. class_{C-1}
/// One row per frame and level, then one "ALL" row per level aggregating
/// every readable frame. Fractions have 6 decimals.
std::string stats_csv_header(int num_classes);
int cmd_stats(const RunConfig& cfg, const fs::path& data_dir, const fs::path& out_path, std::ostream& out,
              std::ostream& err);

int cmd_eval(const RunConfig& cfg, const fs::path& pred_dir, const fs::path& gt_dir, const fs::path& out_path,
             std::ostream& out, std::ostream& err);

int cmd_gradcheck(const GradcheckOptions& opt, const fs::path& out_path, std::ostream& out, std::ostream& err);

struct DemoResult {
  SemanticGrid ground_truth;
  SemanticGrid prediction;
  hss::SelectionSet selection;
  double subdivision_recall = 0.0;
  losses::TotalLoss loss;
  metrics::SscMetrics metrics;
  std::size_t proposals = 0;
  std::size_t fov_voxels = 0;
  nn::Tensor q_low;
  std::string summary_json;
};

/// The synthetic end-to-end pipeline; deterministic in cfg.
DemoResult run_demo(const RunConfig& cfg);
/// Writes prediction.label, prediction.bin, ground_truth.label, q_low.tensor
/// and summary.json into out_dir.
int cmd_demo(const RunConfig& cfg, const fs::path& out_dir, std::ostream& out, std::ostream& err);

std::string bench_json(const hss::SupervisionCost& c, std::size_t k, const GridSpec& spec);
std::string bench_table(const hss::SupervisionCost& c, std::size_t k);
int cmd_bench(const RunConfig& cfg, const fs::path& out_path, std::ostream& out, std::ostream& err);

}  // namespace hsocc::cli
