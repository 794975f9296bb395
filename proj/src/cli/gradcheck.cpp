#include "hsocc/cli/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <sstream>

#include "hsocc/errors.hpp"
#include "hsocc/losses.hpp"
#include "hsocc/random.hpp"

namespace hsocc::cli {

using losses::LossResult;
using losses::ScalMode;
using losses::VoxelMatrix;

double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) throw ShapeError("gradient sizes differ");
  double diff = 0.0, scale = 1e-8;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  return diff / scale;
}

namespace {

// A loss instance: a parameter vector x, f(x) -> (value, analytic grad).
struct Instance {
  std::vector<double> x;
  std::function<std::pair<double, std::vector<double>>(const std::vector<double>&)> f;
};

std::vector<double> numeric_grad(const Instance& inst, double h) {
  std::vector<double> g(inst.x.size());
  std::vector<double> x = inst.x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = inst.f(x).first;
    x[i] = x0 - h;
    const double fm = inst.f(x).first;
    x[i] = x0;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

struct Dims {
  std::size_t n, c;
};

Dims draw_dims(CounterRng& r) { return {2 + r.below(15), 2 + r.below(5)}; }

// Probabilities bounded away from 0 so no log argument is clamped.
std::vector<double> draw_probs(CounterRng& r, Dims d) {
  std::vector<double> p(d.n * d.c);
  for (std::size_t i = 0; i < d.n; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < d.c; ++k) s += p[i * d.c + k] = r.uniform(0.1, 1.0);
    for (std::size_t k = 0; k < d.c; ++k) p[i * d.c + k] /= s;
  }
  return p;
}

// Class fractions from 8 children with random classes.
std::vector<double> draw_fractions(CounterRng& r, Dims d) {
  std::vector<double> f(d.n * d.c, 0.0);
  for (std::size_t i = 0; i < d.n; ++i)
    for (int j = 0; j < 8; ++j) f[i * d.c + r.below(d.c)] += 0.125;
  return f;
}

std::vector<Label> draw_labels(CounterRng& r, std::size_t n, std::size_t c) {
  std::vector<Label> l(n);
  for (auto& v : l) v = static_cast<Label>(r.below(c));
  return l;
}

std::vector<double> draw_logits(CounterRng& r, std::size_t count) {
  std::vector<double> v(count);
  for (auto& x : v) x = r.uniform(-2.0, 2.0);
  return v;
}

// R_c = -|log(a/t)| has a kink at a = t; central differences straddling it
// disagree with either one-sided derivative, so such instances are redrawn.
bool near_recall_kink(const std::vector<double>& x, const std::vector<double>& fr, Dims d, ScalMode mode) {
  const std::size_t first = mode == ScalMode::geometry ? 0 : 1, last = mode == ScalMode::geometry ? 1 : d.c;
  for (std::size_t c = first; c < last; ++c) {
    double a = 0.0, t = 0.0;
    for (std::size_t i = 0; i < d.n; ++i) {
      const double p = mode == ScalMode::geometry ? 1.0 - x[i * d.c] : x[i * d.c + c];
      const double l = mode == ScalMode::geometry ? 1.0 - fr[i * d.c] : fr[i * d.c + c];
      t += l;
      if (l > 0.0) a += p;
    }
    if (t > 0.0 && std::abs(a - t) < 1e-2 * t) return true;
  }
  return false;
}

std::pair<double, std::vector<double>> unpack(const LossResult& r) { return {r.value, r.grad}; }

Instance scal_instance(CounterRng& r, ScalMode mode, bool onehot) {
  const Dims d = draw_dims(r);
  Instance inst;
  inst.x = draw_probs(r, d);
  if (onehot) {
    auto labels = draw_labels(r, d.n, d.c);
    inst.f = [d, mode, labels](const std::vector<double>& x) {
      return unpack(losses::scal_onehot(VoxelMatrix(x, d.n, d.c), labels, mode));
    };
  } else {
    auto fr = draw_fractions(r, d);
    while (near_recall_kink(inst.x, fr, d, mode)) {
      inst.x = draw_probs(r, d);
      fr = draw_fractions(r, d);
    }
    inst.f = [d, mode, fr](const std::vector<double>& x) {
      return unpack(losses::multiclass_scal(VoxelMatrix(x, d.n, d.c), VoxelMatrix(fr, d.n, d.c), mode));
    };
  }
  return inst;
}

std::vector<double> draw_weights(CounterRng& r, std::size_t c) {
  std::vector<double> w(c);
  for (auto& v : w) v = r.uniform(0.5, 2.0);
  return w;
}

std::vector<std::uint8_t> draw_mask(CounterRng& r, std::size_t n) {
  std::vector<std::uint8_t> m(n);
  for (auto& v : m) v = r.below(4) != 0 ? 1 : 0;
  m[r.below(n)] = 1;
  return m;
}

Instance ce_instance(CounterRng& r, bool soft) {
  const Dims d = draw_dims(r);
  Instance inst;
  inst.x = draw_logits(r, d.n * d.c);
  auto w = draw_weights(r, d.c);
  auto mask = draw_mask(r, d.n);
  if (soft) {
    auto fr = draw_fractions(r, d);
    inst.f = [d, w, mask, fr](const std::vector<double>& x) {
      return unpack(losses::weighted_ce(VoxelMatrix(x, d.n, d.c), VoxelMatrix(fr, d.n, d.c), w, mask));
    };
  } else {
    auto labels = draw_labels(r, d.n, d.c);
    inst.f = [d, w, mask, labels](const std::vector<double>& x) {
      return unpack(losses::weighted_ce(VoxelMatrix(x, d.n, d.c), labels, w, mask));
    };
  }
  return inst;
}

SubdivisionMask draw_split_mask(CounterRng& r, std::size_t n) {
  SubdivisionMask m;
  m.spec.dims = {static_cast<int>(n), 1, 1};
  m.requires_split.resize(n);
  m.defined.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    m.requires_split[i] = r.below(2) != 0 ? 1 : 0;
    m.defined[i] = r.below(5) != 0 ? 1 : 0;
  }
  m.defined[r.below(n)] = 1;
  return m;
}

Instance bce_instance(CounterRng& r) {
  const std::size_t n = 2 + r.below(30);
  Instance inst;
  inst.x.resize(n);
  for (auto& v : inst.x) v = r.uniform(0.05, 0.95);
  auto mask = draw_split_mask(r, n);
  inst.f = [mask](const std::vector<double>& x) { return unpack(losses::split_bce(x, mask)); };
  return inst;
}

Instance smooth_l1_instance(CounterRng& r) {
  const std::size_t n = 2 + r.below(30);
  Instance inst;
  inst.x.resize(n);
  std::vector<double> target(n);
  for (std::size_t i = 0; i < n; ++i) {
    target[i] = r.uniform(-2.0, 2.0);
    // Keep |pred - target| away from 0 and 1 where the second derivative jumps.
    double d = r.uniform(0.05, 0.9);
    if (r.below(2) != 0) d += 1.05;
    inst.x[i] = target[i] + (r.below(2) != 0 ? d : -d);
  }
  auto mask = draw_mask(r, n);
  inst.f = [target, mask](const std::vector<double>& x) { return unpack(losses::smooth_l1(x, target, mask)); };
  return inst;
}

Instance total_instance(CounterRng& r) {
  const std::size_t nl = 2 + r.below(10), c = 2 + r.below(4), k = 1 + r.below(std::min<std::size_t>(nl, 3));
  auto hist = std::make_shared<ClassHistogramGrid>();
  hist->spec.dims = {static_cast<int>(nl), 1, 1};
  hist->num_classes = static_cast<int>(c);
  hist->fractions = draw_fractions(r, {nl, c});
  hist->defined.resize(nl);
  for (auto& v : hist->defined) v = r.below(6) != 0 ? 1 : 0;
  hist->defined[0] = 1;
  auto split = std::make_shared<SubdivisionMask>(draw_split_mask(r, nl));
  auto child_labels = draw_labels(r, 8 * k, c);
  std::vector<std::uint8_t> child_valid(8 * k);
  for (auto& v : child_valid) v = r.below(8) != 0 ? 1 : 0;
  child_valid[0] = 1;
  losses::LossWeights w;
  w.ce_weights = draw_weights(r, c);

  Instance inst;
  inst.x = draw_logits(r, nl * c + 8 * k * c);
  for (std::size_t i = 0; i < nl; ++i) inst.x.push_back(r.uniform(0.05, 0.95));
  inst.f = [=](const std::vector<double>& x) {
    std::span<const double> all(x);
    losses::TotalLossInputs in;
    in.low_logits = VoxelMatrix(all.subspan(0, nl * c), nl, c);
    in.high_logits = VoxelMatrix(all.subspan(nl * c, 8 * k * c), 8 * k, c);
    in.split_scores = all.subspan(nl * c + 8 * k * c, nl);
    in.low_labels = hist.get();
    in.split_mask = split.get();
    in.child_labels = child_labels;
    in.child_valid = child_valid;
    const auto t = losses::total_loss(in, w);
    std::vector<double> g = t.grad_low_logits;
    g.insert(g.end(), t.grad_high_logits.begin(), t.grad_high_logits.end());
    g.insert(g.end(), t.grad_split_scores.begin(), t.grad_split_scores.end());
    return std::pair{t.total, g};
  };
  return inst;
}

Instance make_instance(const std::string& loss, CounterRng& r) {
  if (loss == "multiclass_scal_geo") return scal_instance(r, ScalMode::geometry, false);
  if (loss == "multiclass_scal_sem") return scal_instance(r, ScalMode::semantic, false);
  if (loss == "scal_onehot_geo") return scal_instance(r, ScalMode::geometry, true);
  if (loss == "scal_onehot_sem") return scal_instance(r, ScalMode::semantic, true);
  if (loss == "weighted_ce") return ce_instance(r, false);
  if (loss == "weighted_ce_soft") return ce_instance(r, true);
  if (loss == "split_bce") return bce_instance(r);
  if (loss == "smooth_l1") return smooth_l1_instance(r);
  if (loss == "total_loss") return total_instance(r);
  throw ValidationError("unknown loss '" + loss + "'");
}

}  // namespace

std::vector<std::string> gradcheck_losses() {
  return {"multiclass_scal_geo", "multiclass_scal_sem", "scal_onehot_geo", "scal_onehot_sem", "weighted_ce",
          "weighted_ce_soft",    "split_bce",           "smooth_l1",        "total_loss"};
}

std::vector<GradcheckRow> run_gradcheck(const GradcheckOptions& opt) {
  const auto names = gradcheck_losses();
  if (!opt.corrupt.empty() && std::find(names.begin(), names.end(), opt.corrupt) == names.end())
    throw ValidationError("unknown loss '" + opt.corrupt + "'");
  std::vector<GradcheckRow> rows;
  for (const auto& name : names) {
    CounterRng rng(opt.seed, fnv1a64("gradcheck/" + name));
    GradcheckRow row{name, opt.trials, 0.0, true};
    for (std::size_t t = 0; t < opt.trials; ++t) {
      const Instance inst = make_instance(name, rng);
      auto analytic = inst.f(inst.x).second;
      if (name == opt.corrupt && !analytic.empty()) analytic[0] += 0.01 * (1.0 + std::abs(analytic[0]));
      const double e = relative_error(analytic, numeric_grad(inst, opt.step));
      row.max_rel_error = std::max(row.max_rel_error, e);
    }
    row.pass = row.max_rel_error < opt.tolerance;
    rows.push_back(row);
  }
  return rows;
}

std::string gradcheck_table(const std::vector<GradcheckRow>& rows) {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-20s %9s %14s  %s\n", "loss", "instances", "max_rel_error", "status");
  os << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-20s %9zu %14.3e  %s\n", r.loss.c_str(), r.instances, r.max_rel_error,
                  r.pass ? "PASS" : "FAIL");
    os << buf;
  }
  return os.str();
}

}  // namespace hsocc::cli
