#include "hsocc/voxel_grid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "hsocc/errors.hpp"
#include "hsocc/random.hpp"

namespace hsocc {

void GridSpec::validate() const {
  for (int d : dims)
    if (d < 1) throw DimensionError("grid dims must all be >= 1");
  if (!(voxel_size > 0.0)) throw ValidationError("voxel_size must be positive");
}

GridSpec GridSpec::coarsened(int levels) const {
  if (levels < 0) throw DimensionError("negative pyramid level");
  const int factor = 1 << levels;
  GridSpec out = *this;
  for (int a = 0; a < 3; ++a) {
    if (dims[a] % factor != 0)
      throw DimensionError("grid dim " + std::to_string(dims[a]) + " not divisible by " +
                           std::to_string(factor));
    out.dims[a] = dims[a] / factor;
  }
  out.voxel_size = voxel_size * factor;
  return out;
}

GridSpec GridSpec::refined() const {
  GridSpec out = *this;
  for (int a = 0; a < 3; ++a) out.dims[a] = dims[a] * 2;
  out.voxel_size = voxel_size / 2.0;
  return out;
}

GridSpec semantic_kitti_spec() { return GridSpec{{256, 256, 32}, 0.2, {0.0, -25.6, -2.0}}; }

SemanticGrid::SemanticGrid(const GridSpec& s, int classes)
    : spec(s), num_classes(classes), labels(s.voxel_count(), kFreeClass), valid(s.voxel_count(), 1) {}

void SemanticGrid::validate() const {
  spec.validate();
  if (num_classes < 1 || num_classes > 65535) throw ValidationError("num_classes out of range");
  if (labels.size() != spec.voxel_count() || valid.size() != spec.voxel_count())
    throw ShapeError("semantic grid storage does not match its spec");
  for (Label l : labels)
    if (l >= num_classes) throw ValidationError("label " + std::to_string(l) + " >= num_classes");
}

std::size_t SubdivisionMask::split_count() const {
  return static_cast<std::size_t>(std::count(requires_split.begin(), requires_split.end(), 1));
}

std::size_t SubdivisionMask::defined_count() const {
  return static_cast<std::size_t>(std::count(defined.begin(), defined.end(), 1));
}

namespace {

void check_levels(const SemanticGrid& grid, int levels) {
  if (levels < 1) throw DimensionError("levels must be >= 1");
  if (levels > 16) throw DimensionError("levels must be <= 16");
  grid.validate();
  (void)grid.spec.coarsened(levels);
}

// Per-low-voxel integer tallies of valid children, row-major [low voxel][class].
std::vector<std::uint32_t> tally_blocks(const SemanticGrid& grid, const GridSpec& low, int factor) {
  const std::size_t nc = static_cast<std::size_t>(grid.num_classes);
  std::vector<std::uint32_t> counts(low.voxel_count() * nc, 0);
  const auto& d = grid.spec.dims;
  for (int x = 0; x < d[0]; ++x) {
    const int lx = x / factor;
    for (int y = 0; y < d[1]; ++y) {
      const int ly = y / factor;
      const std::size_t row = grid.spec.linear_index(x, y, 0);
      const std::size_t lrow = low.linear_index(lx, ly, 0);
      for (int z = 0; z < d[2]; ++z) {
        if (grid.valid[row + z] == 0) continue;
        ++counts[(lrow + z / factor) * nc + grid.labels[row + z]];
      }
    }
  }
  return counts;
}

}  // namespace

std::vector<ClassHistogramGrid> build_histogram_pyramid(const SemanticGrid& grid, int levels) {
  check_levels(grid, levels);
  std::vector<ClassHistogramGrid> pyramid;
  pyramid.reserve(levels);
  const std::size_t nc = static_cast<std::size_t>(grid.num_classes);
  for (int level = 1; level <= levels; ++level) {
    ClassHistogramGrid h;
    h.spec = grid.spec.coarsened(level);
    h.level = level;
    h.num_classes = grid.num_classes;
    const std::size_t n = h.spec.voxel_count();
    h.fractions.assign(n * nc, 0.0);
    h.defined.assign(n, 0);
    const auto counts = tally_blocks(grid, h.spec, 1 << level);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t total = 0;
      for (std::size_t c = 0; c < nc; ++c) total += counts[i * nc + c];
      if (total == 0) continue;
      h.defined[i] = 1;
      for (std::size_t c = 0; c < nc; ++c)
        h.fractions[i * nc + c] = static_cast<double>(counts[i * nc + c]) / static_cast<double>(total);
    }
    pyramid.push_back(std::move(h));
  }
  return pyramid;
}

SubdivisionMask subdivision_mask(const ClassHistogramGrid& hist) {
  SubdivisionMask m;
  m.spec = hist.spec;
  m.defined = hist.defined;
  m.requires_split.assign(hist.size(), 0);
  for (std::size_t i = 0; i < hist.size(); ++i) {
    if (hist.defined[i] == 0) continue;
    int present = 0;
    for (double f : hist.row(i)) present += f > 0.0 ? 1 : 0;
    m.requires_split[i] = present > 1 ? 1 : 0;
  }
  return m;
}

namespace {

Label plurality(std::span<const double> fractions) {
  // First maximum wins, i.e. ties go to the smaller class ID.
  const auto it = std::max_element(fractions.begin(), fractions.end());
  return static_cast<Label>(it - fractions.begin());
}

}  // namespace

std::vector<StatsReport> homogeneity_stats(const SemanticGrid& grid, int levels) {
  const auto pyramid = build_histogram_pyramid(grid, levels);
  std::vector<StatsReport> reports;
  for (const auto& hist : pyramid) {
    const SubdivisionMask mask = subdivision_mask(hist);
    StatsReport r;
    r.level = hist.level;
    r.dims = hist.spec.dims;
    r.total_voxels = hist.size();
    r.total_defined = mask.defined_count();
    r.requires_split = mask.split_count();
    r.homogeneous_fraction =
        r.total_defined == 0 ? 1.0
                             : 1.0 - static_cast<double>(r.requires_split) / static_cast<double>(r.total_defined);
    r.homogeneous_fraction_all =
        1.0 - static_cast<double>(r.requires_split) / static_cast<double>(r.total_voxels);
    r.class_counts.assign(grid.num_classes, 0);
    for (std::size_t i = 0; i < hist.size(); ++i)
      if (hist.defined[i] != 0) ++r.class_counts[plurality(hist.row(i))];
    reports.push_back(std::move(r));
  }
  return reports;
}

SemanticGrid majority_downsample(const SemanticGrid& grid, int levels) {
  check_levels(grid, levels);
  const GridSpec low = grid.spec.coarsened(levels);
  const auto counts = tally_blocks(grid, low, 1 << levels);
  const std::size_t nc = static_cast<std::size_t>(grid.num_classes);
  SemanticGrid out(low, grid.num_classes);
  for (std::size_t i = 0; i < low.voxel_count(); ++i) {
    const auto* row = counts.data() + i * nc;
    const auto* best = std::max_element(row, row + nc);
    if (*best == 0) {
      out.valid[i] = 0;
      continue;
    }
    out.labels[i] = static_cast<Label>(best - row);
  }
  return out;
}

SemanticGrid nearest_upsample(const SemanticGrid& grid, int levels) {
  const int f = 1 << levels;
  GridSpec hi = grid.spec;
  for (int a = 0; a < 3; ++a) hi.dims[a] *= f;
  hi.voxel_size /= f;
  SemanticGrid out(hi, grid.num_classes);
  for (int x = 0; x < hi.dims[0]; ++x)
    for (int y = 0; y < hi.dims[1]; ++y)
      for (int z = 0; z < hi.dims[2]; ++z) {
        const std::size_t src = grid.spec.linear_index(x / f, y / f, z / f);
        const std::size_t dst = hi.linear_index(x, y, z);
        out.labels[dst] = grid.labels[src];
        out.valid[dst] = grid.valid[src];
      }
  return out;
}

SemanticGrid generate_synthetic_scene(const GridSpec& spec, int num_classes, double planted_heterogeneity,
                                      std::uint64_t seed) {
  if (!(planted_heterogeneity >= 0.0 && planted_heterogeneity <= 1.0))
    throw ValidationError("planted_heterogeneity must lie in [0, 1]");
  if (num_classes < 2) throw ValidationError("synthetic scenes need at least 2 classes");
  const GridSpec blocks = spec.coarsened(1);
  const auto& bd = blocks.dims;
  const std::size_t nblocks = blocks.voxel_count();

  // Block-level layout: ground plane on the bottom block layer, boxes on top.
  std::vector<Label> block_label(nblocks, kFreeClass);
  const Label ground = num_classes > 9 ? Label{9} : Label{1};
  for (int x = 0; x < bd[0]; ++x)
    for (int y = 0; y < bd[1]; ++y) block_label[blocks.linear_index(x, y, 0)] = ground;

  CounterRng layout(seed, fnv1a64("synthetic/layout"));
  const int nboxes = std::max(1, bd[0] * bd[1] / 48);
  for (int b = 0; b < nboxes && bd[2] > 1; ++b) {
    const int sx = 1 + static_cast<int>(layout.below(std::min(4, bd[0])));
    const int sy = 1 + static_cast<int>(layout.below(std::min(4, bd[1])));
    const int sz = 1 + static_cast<int>(layout.below(std::min(3, bd[2] - 1)));
    const int x0 = static_cast<int>(layout.below(bd[0] - sx + 1));
    const int y0 = static_cast<int>(layout.below(bd[1] - sy + 1));
    const auto cls = static_cast<Label>(1 + layout.below(num_classes - 1));
    for (int x = x0; x < x0 + sx; ++x)
      for (int y = y0; y < y0 + sy; ++y)
        for (int z = 1; z <= sz; ++z) block_label[blocks.linear_index(x, y, z)] = cls;
  }

  SemanticGrid grid(spec, num_classes);
  for (int x = 0; x < spec.dims[0]; ++x)
    for (int y = 0; y < spec.dims[1]; ++y)
      for (int z = 0; z < spec.dims[2]; ++z)
        grid.labels[spec.linear_index(x, y, z)] = block_label[blocks.linear_index(x / 2, y / 2, z / 2)];

  // Plant exactly n_het multi-class blocks (partial Fisher-Yates).
  const auto n_het =
      static_cast<std::size_t>(std::llround(planted_heterogeneity * static_cast<double>(nblocks)));
  std::vector<std::size_t> order(nblocks);
  std::iota(order.begin(), order.end(), std::size_t{0});
  CounterRng pick(seed, fnv1a64("synthetic/plant"));
  for (std::size_t i = 0; i < n_het; ++i) {
    const std::size_t j = i + pick.below(nblocks - i);
    std::swap(order[i], order[j]);
    const auto [bx, by, bz] = blocks.coords(order[i]);
    const Label a = block_label[order[i]];
    auto b = static_cast<Label>(pick.below(num_classes - 1));
    if (b >= a) ++b;
    // Nonempty proper subset of the 8 children switches to class b.
    const auto subset = static_cast<unsigned>(1 + pick.below(254));
    for (unsigned o = 0; o < 8; ++o) {
      if (((subset >> o) & 1u) == 0) continue;
      const int cx = 2 * bx + static_cast<int>((o >> 2) & 1u);
      const int cy = 2 * by + static_cast<int>((o >> 1) & 1u);
      const int cz = 2 * bz + static_cast<int>(o & 1u);
      grid.labels[spec.linear_index(cx, cy, cz)] = b;
    }
  }
  return grid;
}

}  // namespace hsocc
