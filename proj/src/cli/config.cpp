#include "hsocc/cli/config.hpp"

#include <json.hpp>
#include <set>

#include "hsocc/errors.hpp"

namespace hsocc::cli {

using nlohmann::json;

SelectionRule parse_rule(std::string_view s) {
  if (s == "learned") return SelectionRule::learned;
  if (s == "entropy") return SelectionRule::entropy;
  throw ValidationError("selection rule must be 'learned' or 'entropy', got '" + std::string(s) + "'");
}

std::string_view rule_name(SelectionRule r) { return r == SelectionRule::learned ? "learned" : "entropy"; }

void RunConfig::validate() const {
  grid.validate();
  grid.coarsened(levels);
  if (num_classes < 2 || num_classes > 65535) throw ValidationError("num_classes must lie in [2, 65535]");
  if (levels < 1) throw ValidationError("levels must be >= 1");
  if (!(loss.lambda1 >= 0.0) || !(loss.lambda2 >= 0.0)) throw ValidationError("loss weights must be >= 0");
  if (workers == 0) throw ValidationError("workers must be >= 1");
  if (!(planted_heterogeneity >= 0.0 && planted_heterogeneity <= 1.0))
    throw ValidationError("planted_heterogeneity must lie in [0, 1]");
  if (camera_width < 8 || camera_height < 8) throw ValidationError("camera image must be at least 8x8");
  if (!(max_depth > 0.0)) throw ValidationError("max_depth must be > 0");
  decoder.validate();
}

RemapTable RunConfig::remap_table() const {
  if (remap.empty()) return RemapTable::identity(num_classes);
  RemapTable t = RemapTable::load(remap);
  if (t.num_classes() != num_classes)
    throw ValidationError("remap table has " + std::to_string(t.num_classes()) + " classes, config says " +
                          std::to_string(num_classes));
  return t;
}

std::vector<std::string> RunConfig::class_names() const {
  if (!remap.empty()) {
    auto names = RemapTable::load(remap).class_names();
    if (!names.empty()) return names;
  }
  if (num_classes == 20) return semantic_kitti_class_names();
  return {};
}

RunConfig RunConfig::toy() {
  RunConfig c;
  c.grid.dims = {32, 32, 8};
  c.grid.voxel_size = 0.4;
  c.grid.origin = {0.0, -6.4, -1.6};
  c.k = 128;
  c.decoder = decoder::DecoderConfig::toy();
  return c;
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (allowed.count(key) == 0) throw ValidationError("unknown config key '" + where + key + "'");
}

template <class T>
void take(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

RunConfig parse_config(std::string_view json_text, RunConfig c) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what());
  }
  try {
    reject_unknown(j,
                   {"grid", "num_classes", "remap", "loss", "k", "levels", "selection_rule", "seed", "workers",
                    "planted_heterogeneity", "camera", "decoder"},
                   "");
    if (j.contains("grid")) {
      const auto& g = j.at("grid");
      reject_unknown(g, {"dims", "voxel_size", "origin"}, "grid.");
      take(g, "dims", c.grid.dims);
      take(g, "voxel_size", c.grid.voxel_size);
      take(g, "origin", c.grid.origin);
    }
    take(j, "num_classes", c.num_classes);
    take(j, "remap", c.remap);
    if (j.contains("loss")) {
      const auto& l = j.at("loss");
      reject_unknown(l, {"lambda1", "lambda2"}, "loss.");
      take(l, "lambda1", c.loss.lambda1);
      take(l, "lambda2", c.loss.lambda2);
    }
    take(j, "k", c.k);
    take(j, "levels", c.levels);
    if (j.contains("selection_rule")) c.rule = parse_rule(j.at("selection_rule").get<std::string>());
    take(j, "seed", c.seed);
    take(j, "workers", c.workers);
    take(j, "planted_heterogeneity", c.planted_heterogeneity);
    if (j.contains("camera")) {
      const auto& cam = j.at("camera");
      reject_unknown(cam, {"width", "height", "max_depth"}, "camera.");
      take(cam, "width", c.camera_width);
      take(cam, "height", c.camera_height);
      take(cam, "max_depth", c.max_depth);
    }
    if (j.contains("decoder")) {
      const auto& d = j.at("decoder");
      reject_unknown(d,
                     {"channels", "num_queries", "iterations", "unet_scales", "image_levels", "heads", "points",
                      "ffn_multiplier"},
                     "decoder.");
      take(d, "channels", c.decoder.channels);
      take(d, "num_queries", c.decoder.num_queries);
      take(d, "iterations", c.decoder.iterations);
      take(d, "unet_scales", c.decoder.unet_scales);
      take(d, "image_levels", c.decoder.image_levels);
      take(d, "heads", c.decoder.heads);
      take(d, "points", c.decoder.points);
      take(d, "ffn_multiplier", c.decoder.ffn_multiplier);
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  const std::string text = read_text_file(path);
  return parse_config(text, std::move(base));
}

}  // namespace hsocc::cli
