#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "hsocc/decoder.hpp"
#include "hsocc/kitti_io.hpp"
#include "hsocc/losses.hpp"
#include "hsocc/voxel_grid.hpp"

namespace hsocc::cli {

enum class SelectionRule { learned, entropy };

SelectionRule parse_rule(std::string_view s);
std::string_view rule_name(SelectionRule r);

/// Every field has a default; a config file overrides any subset. Unknown
/// keys anywhere in the file are rejected.
///
///   {"grid": {"dims": [X, Y, Z], "voxel_size": m, "origin": [x, y, z]},
///    "num_classes": N, "remap": "path.json",
///    "loss": {"lambda1": .., "lambda2": ..},
///    "k": K, "levels": L, "selection_rule": "learned" | "entropy",
///    "seed": S, "workers": W, "planted_heterogeneity": q,
///    "camera": {"width": W, "height": H, "max_depth": m},
///    "decoder": {"channels", "num_queries", "iterations", "unet_scales",
///                "image_levels", "heads", "points", "ffn_multiplier"}}
struct RunConfig {
  /// Full-resolution target grid.
  GridSpec grid = semantic_kitti_spec();
  int num_classes = 20;
  /// Raw-label table; empty means identity over num_classes.
  std::string remap;
  losses::LossWeights loss;
  std::size_t k = 15000;
  int levels = 1;
  SelectionRule rule = SelectionRule::learned;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  double planted_heterogeneity = 0.1;
  int camera_width = 64;
  int camera_height = 32;
  double max_depth = 30.0;
  decoder::DecoderConfig decoder;

  void validate() const;
  RemapTable remap_table() const;
  std::vector<std::string> class_names() const;

  /// Desk-scale demo setup: 32x32x8 target grid (decoder at 16x16x4),
  /// toy decoder, K = 128.
  static RunConfig toy();
};

/// Applies the keys of `json_text` on top of `base`, then validates.
RunConfig parse_config(std::string_view json_text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

}  // namespace hsocc::cli
