#include "hsocc/cli/commands.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <functional>
#include <map>
#include <json.hpp>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "hsocc/decoder.hpp"
#include "hsocc/errors.hpp"
#include "hsocc/geometry.hpp"
#include "hsocc/kitti_io.hpp"
#include "hsocc/synthetic_camera.hpp"

namespace hsocc::cli {

using nlohmann::ordered_json;

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  for (auto& t : pool) t.join();
}

namespace {

void emit(const std::string& text, const fs::path& out_path, std::ostream& out) {
  out << text;
  if (!out_path.empty()) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(text.data());
    write_file(out_path, std::span<const std::uint8_t>(p, text.size()));
  }
}

std::string fixed6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

/// Sorted frame IDs (file stems) of the `.label` files in dir.
std::vector<std::string> label_frames(const fs::path& dir) {
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".label") ids.push_back(e.path().stem().string());
  std::sort(ids.begin(), ids.end());
  return ids;
}

SemanticGrid load_frame(const fs::path& dir, const std::string& id, const GridSpec& spec, const RemapTable& remap,
                        bool require_invalid) {
  SemanticGrid g = read_label_grid(read_file(dir / (id + ".label")), spec, remap);
  const fs::path inv = dir / (id + ".invalid");
  if (fs::exists(inv))
    apply_invalid_mask(g, read_packed_bitgrid(read_file(inv), spec));
  else if (require_invalid)
    throw FormatError("missing " + inv.filename().string());
  return g;
}

void check_dir(const fs::path& dir, const char* what) {
  if (dir.empty() || !fs::is_directory(dir)) throw ValidationError(std::string(what) + " is not a directory: " + dir.string());
}

}  // namespace

std::string stats_csv_header(int num_classes) {
  std::string h =
      "frame,level,dim_x,dim_y,dim_z,total_voxels,defined_voxels,requires_split,requires_split_fraction,"
      "homogeneous_fraction,homogeneous_fraction_all";
  for (int c = 0; c < num_classes; ++c) h += ",class_" + std::to_string(c);
  return h + "\n";
}

namespace {

std::string stats_row(const std::string& frame, const StatsReport& r) {
  std::ostringstream os;
  const double split_frac =
      r.total_defined == 0 ? 0.0 : static_cast<double>(r.requires_split) / static_cast<double>(r.total_defined);
  os << frame << ',' << r.level << ',' << r.dims[0] << ',' << r.dims[1] << ',' << r.dims[2] << ',' << r.total_voxels
     << ',' << r.total_defined << ',' << r.requires_split << ',' << fixed6(split_frac) << ','
     << fixed6(r.homogeneous_fraction) << ',' << fixed6(r.homogeneous_fraction_all);
  for (auto c : r.class_counts) os << ',' << c;
  os << '\n';
  return os.str();
}

void merge(StatsReport& acc, const StatsReport& r) {
  acc.level = r.level;
  acc.dims = r.dims;
  acc.total_voxels += r.total_voxels;
  acc.total_defined += r.total_defined;
  acc.requires_split += r.requires_split;
  if (acc.class_counts.empty()) acc.class_counts.assign(r.class_counts.size(), 0);
  for (std::size_t c = 0; c < r.class_counts.size(); ++c) acc.class_counts[c] += r.class_counts[c];
  acc.homogeneous_fraction =
      acc.total_defined == 0 ? 1.0
                             : 1.0 - static_cast<double>(acc.requires_split) / static_cast<double>(acc.total_defined);
  acc.homogeneous_fraction_all =
      acc.total_voxels == 0 ? 1.0
                            : 1.0 - static_cast<double>(acc.requires_split) / static_cast<double>(acc.total_voxels);
}

}  // namespace

int cmd_stats(const RunConfig& cfg, const fs::path& data_dir, const fs::path& out_path, std::ostream& out,
              std::ostream& err) {
  check_dir(data_dir, "data directory");
  const auto ids = label_frames(data_dir);
  if (ids.empty()) throw ValidationError("no .label files in " + data_dir.string());
  const RemapTable remap = cfg.remap_table();

  std::vector<std::vector<StatsReport>> reports(ids.size());
  std::vector<std::string> errors(ids.size());
  parallel_for(ids.size(), cfg.workers, [&](std::size_t i) {
    try {
      reports[i] = homogeneity_stats(load_frame(data_dir, ids[i], cfg.grid, remap, true), cfg.levels);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });

  std::string csv = stats_csv_header(cfg.num_classes);
  std::vector<StatsReport> all(static_cast<std::size_t>(cfg.levels));
  bool failed = false;
  std::size_t good = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!errors[i].empty()) {
      err << "error: " << ids[i] << ": " << errors[i] << '\n';
      failed = true;
      continue;
    }
    ++good;
    for (std::size_t l = 0; l < reports[i].size(); ++l) {
      csv += stats_row(ids[i], reports[i][l]);
      merge(all[l], reports[i][l]);
    }
  }
  if (good > 0)
    for (const auto& r : all) csv += stats_row("ALL", r);
  emit(csv, out_path, out);
  return failed ? kPartialFailure : kSuccess;
}

int cmd_eval(const RunConfig& cfg, const fs::path& pred_dir, const fs::path& gt_dir, const fs::path& out_path,
             std::ostream& out, std::ostream& err) {
  check_dir(pred_dir, "prediction directory");
  check_dir(gt_dir, "ground-truth directory");
  const auto pred_ids = label_frames(pred_dir), gt_ids = label_frames(gt_dir);
  const std::set<std::string> ps(pred_ids.begin(), pred_ids.end()), gs(gt_ids.begin(), gt_ids.end());
  bool failed = false;
  std::vector<std::string> both;
  for (const auto& id : gt_ids)
    if (ps.count(id) != 0)
      both.push_back(id);
    else {
      err << "warning: frame " << id << " has no prediction, skipped\n";
      failed = true;
    }
  for (const auto& id : pred_ids)
    if (gs.count(id) == 0) {
      err << "warning: frame " << id << " has no ground truth, skipped\n";
      failed = true;
    }
  if (both.empty()) throw ValidationError("no frame has both a prediction and a ground truth");

  const RemapTable gt_remap = cfg.remap_table();
  const RemapTable pred_remap = RemapTable::identity(cfg.num_classes);
  std::vector<metrics::ConfusionMatrix> cms(both.size());
  std::vector<std::string> errors(both.size());
  parallel_for(both.size(), cfg.workers, [&](std::size_t i) {
    try {
      const SemanticGrid gt = load_frame(gt_dir, both[i], cfg.grid, gt_remap, false);
      const SemanticGrid pred = load_frame(pred_dir, both[i], cfg.grid, pred_remap, false);
      cms[i] = metrics::accumulate(pred, gt);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });
  metrics::ConfusionMatrix total(cfg.num_classes);
  std::size_t good = 0;
  for (std::size_t i = 0; i < both.size(); ++i) {
    if (!errors[i].empty()) {
      err << "error: " << both[i] << ": " << errors[i] << '\n';
      failed = true;
      continue;
    }
    total += cms[i];
    ++good;
  }
  if (good == 0) return kPartialFailure;
  const auto m = metrics::ssc_metrics(total);
  const auto names = cfg.class_names();
  out << metrics::to_table(m, names);
  if (!out_path.empty()) {
    const std::string j = metrics::to_json(m, names);
    write_file(out_path, std::span(reinterpret_cast<const std::uint8_t*>(j.data()), j.size()));
  } else {
    out << metrics::to_json(m, names);
  }
  return failed ? kPartialFailure : kSuccess;
}

int cmd_gradcheck(const GradcheckOptions& opt, const fs::path& out_path, std::ostream& out, std::ostream&) {
  const auto rows = run_gradcheck(opt);
  emit(gradcheck_table(rows), out_path, out);
  return std::all_of(rows.begin(), rows.end(), [](const GradcheckRow& r) { return r.pass; }) ? kSuccess
                                                                                              : kPartialFailure;
}

DemoResult run_demo(const RunConfig& cfg) {
  cfg.validate();
  const GridSpec low = cfg.grid.coarsened(1);
  const auto& dcfg = cfg.decoder;
  dcfg.validate_grid(low.dims);
  const auto classes = static_cast<std::size_t>(cfg.num_classes);

  DemoResult r;
  r.ground_truth = generate_synthetic_scene(cfg.grid, cfg.num_classes, cfg.planted_heterogeneity, cfg.seed);
  const CameraRig rig = synth::forward_rig(cfg.camera_width, cfg.camera_height);
  const synth::RenderedView view = synth::render(r.ground_truth, rig, cfg.max_depth);

  decoder::DecoderInputs in;
  in.proposals = backproject_depth_to_voxels(view.depth, rig, low);
  in.refpts = project_voxel_centers(low, rig);

  nn::ParamStore store(cfg.seed);
  const auto encoders = synth::make_feature_encoders(store, dcfg.channels, dcfg.image_levels);
  in.features = synth::encode_view(view, encoders, cfg.num_classes, cfg.max_depth);
  const auto params = decoder::make_decoder_params(store, dcfg);
  const nn::Linear low_head = nn::make_linear(store, "head.low", dcfg.channels, classes);
  const nn::Linear high_head = nn::make_linear(store, "head.high", dcfg.channels, classes);
  const hss::SplitHeads split = hss::make_split_heads(store, "hss", dcfg.channels);

  const auto run = decoder::run_decoder(in, params, dcfg);
  r.q_low = run.q_low();
  r.proposals = run.initial.proposal.size() -
                static_cast<std::size_t>(std::count(run.initial.proposal.begin(), run.initial.proposal.end(), 0));
  r.fov_voxels = in.refpts.fov_count();

  const nn::Tensor rows = nn::channels_last(r.q_low);
  const nn::Tensor low_logits = nn::linear_forward(rows, low_head);
  const losses::VoxelMatrix low_m(low_logits.data(), low.voxel_count(), classes);
  const auto split_scores = hss::learned_split_scores(rows, split.score);
  const auto scores = cfg.rule == SelectionRule::learned ? split_scores : hss::entropy_scores(low_m);
  const auto pyramid = build_histogram_pyramid(r.ground_truth, 1);
  std::vector<std::uint8_t> candidates(low.voxel_count());
  for (std::size_t i = 0; i < candidates.size(); ++i)
    candidates[i] = in.refpts.fov[i] != 0 && pyramid[0].defined[i] != 0 ? 1 : 0;
  r.selection = hss::select_topk(scores, cfg.k, candidates);

  const auto high = hss::subdivide_selected(rows, r.selection, split.feature);
  const nn::Tensor high_logits = nn::linear_forward(high.features, high_head);
  const losses::VoxelMatrix high_m(high_logits.data(), 8 * r.selection.k(), classes);
  r.prediction = hss::recombine_predictions(low_m, high_m, r.selection, low);

  const auto mask = subdivision_mask(pyramid[0]);
  r.subdivision_recall = hss::subdivision_recall(r.selection, mask);
  const auto children = hss::gather_child_labels(r.ground_truth, r.selection);
  losses::TotalLossInputs li;
  li.low_logits = low_m;
  li.high_logits = high_m;
  li.split_scores = split_scores;
  li.low_labels = &pyramid[0];
  li.split_mask = &mask;
  li.child_labels = children.labels;
  li.child_valid = children.valid;
  r.loss = losses::total_loss(li, cfg.loss);
  r.metrics = metrics::ssc_metrics(metrics::accumulate(r.prediction, r.ground_truth));

  ordered_json j;
  j["grid"] = cfg.grid.dims;
  j["low_grid"] = low.dims;
  j["seed"] = cfg.seed;
  j["selection_rule"] = rule_name(cfg.rule);
  j["k"] = r.selection.k();
  j["proposal_voxels"] = r.proposals;
  j["fov_voxels"] = r.fov_voxels;
  j["requires_split"] = mask.split_count();
  j["subdivision_recall"] = r.subdivision_recall;
  j["losses"] = {{"total", r.loss.total},          {"low", r.loss.low},
                 {"high", r.loss.high},            {"bce", r.loss.bce},
                 {"low_ce", r.loss.low_ce},        {"low_mc_geo", r.loss.low_mc_geo},
                 {"high_ce", r.loss.high_ce},      {"high_scal_geo", r.loss.high_scal_geo},
                 {"high_scal_sem", r.loss.high_scal_sem}};
  j["iou_occupancy"] = r.metrics.iou_occupancy;
  j["miou"] = r.metrics.miou;
  r.summary_json = j.dump(2) + "\n";
  return r;
}

int cmd_demo(const RunConfig& cfg, const fs::path& out_dir, std::ostream& out, std::ostream&) {
  const DemoResult r = run_demo(cfg);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_file(out_dir / "prediction.label", write_label_grid(r.prediction));
    write_file(out_dir / "prediction.bin", write_packed_bitgrid(occupancy_of(r.prediction)));
    write_file(out_dir / "ground_truth.label", write_label_grid(r.ground_truth));
    write_file(out_dir / "q_low.tensor", nn::tensor_blob(r.q_low));
    write_file(out_dir / "summary.json",
               std::span(reinterpret_cast<const std::uint8_t*>(r.summary_json.data()), r.summary_json.size()));
  }
  out << r.summary_json;
  return kSuccess;
}

std::string bench_json(const hss::SupervisionCost& c, std::size_t k, const GridSpec& spec) {
  ordered_json j;
  j["k"] = k;
  j["target_grid"] = spec.dims;
  j["low_grid"] = spec.coarsened(1).dims;
  j["dense"] = {{"voxels", c.dense_voxels}, {"bytes", c.dense_bytes}, {"flops", c.dense_flops}};
  j["hierarchical"] = {{"low_voxels", c.low_voxels},
                       {"high_voxels", c.high_voxels},
                       {"voxels", c.hierarchical_voxels},
                       {"bytes", c.hierarchical_bytes},
                       {"flops", c.hierarchical_flops}};
  j["memory_touch_ratio"] = c.memory_touch_ratio;
  j["flop_ratio"] = c.hierarchical_flops / c.dense_flops;
  return j.dump(2) + "\n";
}

std::string bench_table(const hss::SupervisionCost& c, std::size_t k) {
  char buf[256];
  std::ostringstream os;
  std::snprintf(buf, sizeof buf, "%-14s %14s %16s %16s\n", "path", "voxels", "bytes", "flops");
  os << buf;
  std::snprintf(buf, sizeof buf, "%-14s %14zu %16zu %16.4e\n", "dense", c.dense_voxels, c.dense_bytes, c.dense_flops);
  os << buf;
  std::snprintf(buf, sizeof buf, "%-14s %14zu %16zu %16.4e\n", "hierarchical", c.hierarchical_voxels,
                c.hierarchical_bytes, c.hierarchical_flops);
  os << buf;
  std::snprintf(buf, sizeof buf, "K = %zu, memory-touch ratio = %.6f, flop ratio = %.6f\n", k, c.memory_touch_ratio,
                c.hierarchical_flops / c.dense_flops);
  os << buf;
  return os.str();
}

int cmd_bench(const RunConfig& cfg, const fs::path& out_path, std::ostream& out, std::ostream&) {
  const auto cost = hss::supervision_cost(cfg.k, cfg.grid, cfg.decoder.channels, static_cast<std::size_t>(cfg.num_classes));
  out << bench_table(cost, cfg.k);
  const std::string j = bench_json(cost, cfg.k, cfg.grid);
  if (!out_path.empty())
    write_file(out_path, std::span(reinterpret_cast<const std::uint8_t*>(j.data()), j.size()));
  else
    out << j;
  return kSuccess;
}

}  // namespace hsocc::cli
