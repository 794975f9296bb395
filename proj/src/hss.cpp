#include "hsocc/hss.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numeric>

#include "hsocc/errors.hpp"

namespace hsocc::hss {

std::string to_json(const SelectionSet& s) {
  nlohmann::json j;
  j["k"] = s.k();
  j["indices"] = s.indices;
  j["scores"] = s.scores;
  return j.dump();
}

SelectionSet selection_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    SelectionSet s;
    s.indices = j.at("indices").get<std::vector<std::size_t>>();
    s.scores = j.at("scores").get<std::vector<double>>();
    if (s.indices.size() != s.scores.size() || j.at("k").get<std::size_t>() != s.indices.size())
      throw FormatError("selection json: k, indices and scores disagree");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("selection json: ") + e.what());
  }
}

SelectionSet select_topk(std::span<const double> scores, std::size_t k, std::span<const std::uint8_t> candidates) {
  if (!candidates.empty() && candidates.size() != scores.size())
    throw ShapeError("select_topk: candidate mask size differs from score count");
  std::vector<std::size_t> pool;
  pool.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!candidates.empty() && candidates[i] == 0) continue;
    if (std::isnan(scores[i])) throw ValidationError("select_topk: NaN score at index " + std::to_string(i));
    pool.push_back(i);
  }
  if (k > pool.size())
    throw ValidationError("select_topk: K=" + std::to_string(k) + " exceeds " + std::to_string(pool.size()) +
                          " candidates");
  const auto better = [&](std::size_t a, std::size_t b) {
    return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
  };
  std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k), pool.end(), better);
  SelectionSet s;
  s.indices.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
  s.scores.reserve(k);
  for (auto i : s.indices) s.scores.push_back(scores[i]);
  return s;
}

std::vector<double> entropy_scores(const losses::VoxelMatrix& logits) {
  const auto probs = losses::softmax_rows(logits);
  std::vector<double> h(logits.voxels, 0.0);
  for (std::size_t i = 0; i < logits.voxels; ++i)
    for (std::size_t c = 0; c < logits.classes; ++c) {
      const double p = probs[i * logits.classes + c];
      if (p > 0.0) h[i] -= p * std::log(p);
    }
  return h;
}

SelectionSet select_split_parents(const SubdivisionMask& mask) {
  SelectionSet s;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask.requires_split[i] != 0) {
      s.indices.push_back(i);
      s.scores.push_back(1.0);
    }
  return s;
}

SplitHeads make_split_heads(nn::ParamStore& store, const std::string& name, std::size_t channels) {
  SplitHeads h;
  h.score = nn::make_mlp(store, name + ".split_score", {channels, channels, 1}, nn::Activation::relu,
                         nn::Activation::sigmoid);
  h.feature = nn::make_mlp(store, name + ".split_feature", {channels, 4 * channels, 8 * channels},
                           nn::Activation::relu, nn::Activation::identity);
  return h;
}

std::vector<double> learned_split_scores(const nn::Tensor& low_feats, const nn::Mlp& score_head) {
  const nn::Tensor out = nn::mlp_forward(low_feats, score_head);
  if (out.dim(1) != 1) throw ShapeError("split score head must output one value per voxel");
  return out.values();
}

HighVoxelFeatures subdivide_selected(const nn::Tensor& low_feats, const SelectionSet& selection,
                                     const nn::Mlp& split_head) {
  if (low_feats.rank() != 2) throw ShapeError("subdivide_selected: features must be [n][C]");
  const std::size_t c = low_feats.dim(1);
  if (split_head.layers.empty() || split_head.layers.front().in_features() != c ||
      split_head.layers.back().out_features() != 8 * c)
    throw ShapeError("subdivide_selected: split head must map C -> 8C");
  const std::size_t k = selection.k();
  HighVoxelFeatures out;
  out.features = nn::Tensor({8 * k, c});
  out.parent.resize(8 * k);
  out.octant.resize(8 * k);
  if (k == 0) return out;
  nn::Tensor parents({k, c});
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t p = selection.indices[j];
    if (p >= low_feats.dim(0)) throw ShapeError("subdivide_selected: selection index out of range");
    std::copy_n(low_feats.row(p).begin(), c, parents.row(j).begin());
  }
  const nn::Tensor split = nn::mlp_forward(parents, split_head);  // [k][8C] == [8k][C] row-major
  std::copy(split.data().begin(), split.data().end(), out.features.data().begin());
  for (std::size_t j = 0; j < k; ++j)
    for (unsigned o = 0; o < 8; ++o) {
      out.parent[8 * j + o] = selection.indices[j];
      out.octant[8 * j + o] = static_cast<std::uint8_t>(o);
    }
  return out;
}

ChildLabels gather_child_labels(const SemanticGrid& full, const SelectionSet& selection) {
  const GridSpec low = full.spec.coarsened(1);
  ChildLabels out;
  out.labels.resize(8 * selection.k());
  out.valid.resize(8 * selection.k());
  for (std::size_t j = 0; j < selection.k(); ++j) {
    if (selection.indices[j] >= low.voxel_count()) throw ShapeError("gather_child_labels: index out of range");
    const auto [px, py, pz] = low.coords(selection.indices[j]);
    for (unsigned o = 0; o < 8; ++o) {
      const auto d = octant_offset(o);
      const std::size_t i = full.spec.linear_index(2 * px + d[0], 2 * py + d[1], 2 * pz + d[2]);
      out.labels[8 * j + o] = full.labels[i];
      out.valid[8 * j + o] = full.valid[i];
    }
  }
  return out;
}

namespace {

Label argmax_row(std::span<const double> row) {
  return static_cast<Label>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace

SemanticGrid recombine_predictions(const losses::VoxelMatrix& low_logits, const losses::VoxelMatrix& high_logits,
                                   const SelectionSet& selection, const GridSpec& low_spec) {
  if (low_logits.voxels != low_spec.voxel_count()) throw ShapeError("recombine: low logits do not match the grid");
  if (high_logits.voxels != 8 * selection.k()) throw ShapeError("recombine: expected 8 high rows per selected parent");
  if (selection.k() > 0 && high_logits.classes != low_logits.classes)
    throw ShapeError("recombine: class counts differ");
  SemanticGrid out(low_spec.refined(), static_cast<int>(low_logits.classes));
  const auto& fs = out.spec;
  for (std::size_t p = 0; p < low_spec.voxel_count(); ++p) {
    const Label l = argmax_row(low_logits.row(p));
    const auto [x, y, z] = low_spec.coords(p);
    for (unsigned o = 0; o < 8; ++o) {
      const auto d = octant_offset(o);
      out.labels[fs.linear_index(2 * x + d[0], 2 * y + d[1], 2 * z + d[2])] = l;
    }
  }
  for (std::size_t j = 0; j < selection.k(); ++j) {
    const std::size_t p = selection.indices[j];
    if (p >= low_spec.voxel_count()) throw ShapeError("recombine: selection index out of range");
    const auto [x, y, z] = low_spec.coords(p);
    for (unsigned o = 0; o < 8; ++o) {
      const auto d = octant_offset(o);
      out.labels[fs.linear_index(2 * x + d[0], 2 * y + d[1], 2 * z + d[2])] = argmax_row(high_logits.row(8 * j + o));
    }
  }
  return out;
}

double subdivision_recall(const SelectionSet& selection, const SubdivisionMask& gt) {
  const std::size_t need = gt.split_count();
  if (need == 0) return 1.0;
  std::vector<std::uint8_t> picked(gt.size(), 0);
  for (auto i : selection.indices) {
    if (i >= gt.size()) throw ShapeError("subdivision_recall: index out of range");
    picked[i] = 1;
  }
  std::size_t hit = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) hit += (picked[i] != 0 && gt.requires_split[i] != 0) ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(need);
}

SupervisionCost supervision_cost(std::size_t k, const GridSpec& full_spec, std::size_t channels, std::size_t classes) {
  const GridSpec low = full_spec.coarsened(1);
  if (k > low.voxel_count()) throw ValidationError("K exceeds the number of low-resolution voxels");
  SupervisionCost c;
  c.dense_voxels = full_spec.voxel_count();
  c.low_voxels = low.voxel_count();
  c.high_voxels = 8 * k;
  c.hierarchical_voxels = c.low_voxels + c.high_voxels;
  c.memory_touch_ratio = static_cast<double>(c.hierarchical_voxels) / static_cast<double>(c.dense_voxels);
  c.dense_bytes = c.dense_voxels * channels * 4;
  c.hierarchical_bytes = c.hierarchical_voxels * channels * 4;
  const double ch = static_cast<double>(channels), cls = static_cast<double>(classes);
  const double head = 2.0 * ch * cls;
  // Trilinear: 8 taps, one multiply-add each, per channel per output voxel.
  c.dense_flops = static_cast<double>(c.dense_voxels) * (head + 16.0 * ch);
  const double split_score = 2.0 * ch * ch + 2.0 * ch;
  const double split_feature = 2.0 * ch * 4.0 * ch + 2.0 * 4.0 * ch * 8.0 * ch;
  c.hierarchical_flops = static_cast<double>(c.low_voxels) * (head + split_score) +
                         static_cast<double>(k) * split_feature + static_cast<double>(c.high_voxels) * head;
  return c;
}

}  // namespace hsocc::hss
