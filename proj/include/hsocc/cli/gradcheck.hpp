#pragma once

// Central finite-difference check of every analytic loss gradient.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace hsocc::cli {

struct GradcheckOptions {
  std::uint64_t seed = 0;
  std::size_t trials = 100;
  double step = 1e-4;
  double tolerance = 1e-4;
  /// Loss name whose analytic gradient is perturbed before comparison (negative control).
  std::string corrupt;
};

struct GradcheckRow {
  std::string loss;
  std::size_t instances = 0;
  double max_rel_error = 0.0;
  bool pass = false;
};

/// max_i |a_i - n_i| / max(max_i |a_i|, max_i |n_i|, 1e-8)
double relative_error(std::span<const double> analytic, std::span<const double> numeric);

std::vector<std::string> gradcheck_losses();
std::vector<GradcheckRow> run_gradcheck(const GradcheckOptions& opt);
std::string gradcheck_table(const std::vector<GradcheckRow>& rows);

}  // namespace hsocc::cli
