#include "hsocc/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hsocc/errors.hpp"

namespace hsocc::losses {

VoxelMatrix::VoxelMatrix(std::span<const double> v, std::size_t n, std::size_t c) : values(v), voxels(n), classes(c) {
  if (v.size() != n * c)
    throw ShapeError("voxel matrix holds " + std::to_string(v.size()) + " values, expected " +
                     std::to_string(n) + "x" + std::to_string(c));
}

namespace {

bool included(std::span<const std::uint8_t> mask, std::size_t i) { return mask.empty() || mask[i] != 0; }

void check_mask(std::span<const std::uint8_t> mask, std::size_t n) {
  if (!mask.empty() && mask.size() != n) throw ShapeError("mask size does not match the voxel count");
}

void check_probabilities(const VoxelMatrix& m, const char* what) {
  for (double v : m.values) {
    if (!std::isfinite(v)) throw ValidationError(std::string(what) + " contains a non-finite value");
    if (v < 0.0) throw ValidationError(std::string(what) + " contains a negative probability");
  }
}

// log(max(r, eps)) and its derivative factor (0 when clamped).
struct ClampedLog {
  double value;
  bool clamped;
};

ClampedLog clamped_log(double ratio) {
  if (ratio < kEps) return {std::log(kEps), true};
  return {std::log(ratio), false};
}

// One affinity channel. phat[i], target[i] and positive[i] over the included
// voxels; accumulates d(sum of terms)/d phat into dterms.
struct ChannelTerms {
  double sum = 0.0;
  int count = 0;
};

ChannelTerms affinity_channel(std::span<const double> phat, std::span<const double> target,
                              std::span<const std::uint8_t> positive, std::span<double> dterms) {
  double a = 0.0, b = 0.0, t = 0.0, neg_pred = 0.0, neg = 0.0;
  for (std::size_t i = 0; i < phat.size(); ++i) {
    b += phat[i];
    t += target[i];
    if (positive[i] != 0) {
      a += phat[i];
    } else {
      neg_pred += 1.0 - phat[i];
      neg += 1.0;
    }
  }
  ChannelTerms out;
  const bool present = t > 0.0;
  if (present && b > 0.0) {
    const auto p = clamped_log(a / b);
    out.sum += p.value;
    ++out.count;
    if (!p.clamped)
      for (std::size_t i = 0; i < phat.size(); ++i) dterms[i] += (positive[i] != 0 ? 1.0 / a : 0.0) - 1.0 / b;
  }
  if (present) {
    const auto r = clamped_log(a / t);
    const double sign = r.value > 0.0 ? 1.0 : (r.value < 0.0 ? -1.0 : 0.0);
    out.sum += -std::abs(r.value);
    ++out.count;
    if (!r.clamped)
      for (std::size_t i = 0; i < phat.size(); ++i)
        if (positive[i] != 0) dterms[i] += -sign / a;
  }
  if (neg > 0.0) {
    const auto s = clamped_log(neg_pred / neg);
    out.sum += s.value;
    ++out.count;
    if (!s.clamped)
      for (std::size_t i = 0; i < phat.size(); ++i)
        if (positive[i] == 0) dterms[i] += -1.0 / neg_pred;
  }
  return out;
}

struct ChannelBuffers {
  std::vector<std::size_t> voxel;  // included voxel indices
  std::vector<double> phat, target, dterms;
  std::vector<std::uint8_t> positive;

  void reset(std::size_t n) {
    phat.assign(n, 0.0);
    target.assign(n, 0.0);
    dterms.assign(n, 0.0);
    positive.assign(n, 0);
  }
};

// Shared driver: `fill(channel, buffers)` loads phat/target/positive for the
// included voxels; `scatter(channel, voxel, d)` writes d(loss)/d(phat).
template <class Fill, class Scatter>
LossResult run_affinity(std::size_t voxels, std::size_t channels, std::size_t first_channel,
                        std::size_t grad_size, std::span<const std::uint8_t> mask, Fill fill, Scatter scatter) {
  ChannelBuffers buf;
  for (std::size_t i = 0; i < voxels; ++i)
    if (included(mask, i)) buf.voxel.push_back(i);
  LossResult res;
  res.grad.assign(grad_size, 0.0);
  double sum = 0.0;
  int active = 0;
  std::vector<std::vector<double>> dchannel;
  dchannel.reserve(channels);
  for (std::size_t c = first_channel; c < channels; ++c) {
    buf.reset(buf.voxel.size());
    fill(c, buf);
    const ChannelTerms terms = affinity_channel(buf.phat, buf.target, buf.positive, buf.dterms);
    dchannel.push_back(buf.dterms);
    if (terms.count == 0) {
      dchannel.back().assign(buf.voxel.size(), 0.0);
      continue;
    }
    sum += terms.sum;
    ++active;
    res.defined_terms += static_cast<std::size_t>(terms.count);
  }
  if (active == 0) return res;
  res.value = -sum / active;
  const double scale = -1.0 / active;
  for (std::size_t k = 0; k < dchannel.size(); ++k)
    for (std::size_t j = 0; j < buf.voxel.size(); ++j)
      if (dchannel[k][j] != 0.0) scatter(first_channel + k, buf.voxel[j], scale * dchannel[k][j], res.grad);
  return res;
}

}  // namespace

LossResult multiclass_scal(const VoxelMatrix& pred, const VoxelMatrix& labels, ScalMode mode,
                           std::span<const std::uint8_t> mask) {
  if (pred.voxels != labels.voxels || pred.classes != labels.classes)
    throw ShapeError("multiclass_scal: prediction and label shapes differ");
  if (pred.classes < 2) throw ShapeError("multiclass_scal: need at least 2 classes");
  check_mask(mask, pred.voxels);
  check_probabilities(pred, "multiclass_scal predictions");
  check_probabilities(labels, "multiclass_scal labels");
  const std::size_t nc = pred.classes;

  if (mode == ScalMode::geometry) {
    return run_affinity(
        pred.voxels, 1, 0, pred.values.size(), mask,
        [&](std::size_t, ChannelBuffers& b) {
          for (std::size_t j = 0; j < b.voxel.size(); ++j) {
            const std::size_t i = b.voxel[j];
            b.phat[j] = 1.0 - pred.at(i, kFreeClass);
            b.target[j] = 1.0 - labels.at(i, kFreeClass);
            b.positive[j] = b.target[j] > 0.0;
          }
        },
        [&](std::size_t, std::size_t i, double d, std::vector<double>& g) { g[i * nc + kFreeClass] -= d; });
  }
  const std::size_t first = mode == ScalMode::semantic ? 1 : 0;
  return run_affinity(
      pred.voxels, nc, first, pred.values.size(), mask,
      [&](std::size_t c, ChannelBuffers& b) {
        for (std::size_t j = 0; j < b.voxel.size(); ++j) {
          const std::size_t i = b.voxel[j];
          b.phat[j] = pred.at(i, c);
          b.target[j] = labels.at(i, c);
          b.positive[j] = b.target[j] > 0.0;
        }
      },
      [&](std::size_t c, std::size_t i, double d, std::vector<double>& g) { g[i * nc + c] += d; });
}

LossResult scal_onehot(const VoxelMatrix& pred, std::span<const Label> labels, ScalMode mode,
                       std::span<const std::uint8_t> mask) {
  if (labels.size() != pred.voxels) throw ShapeError("scal_onehot: label count differs from voxel count");
  if (pred.classes < 2) throw ShapeError("scal_onehot: need at least 2 classes");
  check_mask(mask, pred.voxels);
  check_probabilities(pred, "scal_onehot predictions");
  const std::size_t nc = pred.classes;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (included(mask, i) && labels[i] >= nc) throw ValidationError("scal_onehot: label out of range");

  // Direct "nonempty vs empty" form for geometry; per-class indicator sums
  // for the semantic form. Both share the term/skip rules of multiclass_scal.
  LossResult res;
  res.grad.assign(pred.values.size(), 0.0);
  const std::size_t first = mode == ScalMode::semantic ? 1 : 0;
  const std::size_t last = mode == ScalMode::geometry ? 1 : nc;
  double total = 0.0;
  int active = 0;
  std::vector<double> d(pred.voxels, 0.0);
  for (std::size_t c = first; c < last; ++c) {
    auto prob = [&](std::size_t i) { return mode == ScalMode::geometry ? 1.0 - pred.at(i, kFreeClass) : pred.at(i, c); };
    auto is_pos = [&](std::size_t i) { return mode == ScalMode::geometry ? labels[i] != kFreeClass : labels[i] == c; };
    double tp = 0.0, pred_sum = 0.0, npos = 0.0, tn = 0.0, nneg = 0.0;
    for (std::size_t i = 0; i < pred.voxels; ++i) {
      if (!included(mask, i)) continue;
      const double p = prob(i);
      pred_sum += p;
      if (is_pos(i)) {
        tp += p;
        npos += 1.0;
      } else {
        tn += 1.0 - p;
        nneg += 1.0;
      }
    }
    std::fill(d.begin(), d.end(), 0.0);
    int terms = 0;
    double sum = 0.0;
    if (npos > 0.0) {
      if (pred_sum > 0.0) {
        const double precision = tp / pred_sum;
        sum += std::log(std::max(precision, kEps));
        ++terms;
        if (precision >= kEps)
          for (std::size_t i = 0; i < pred.voxels; ++i)
            if (included(mask, i)) d[i] += (is_pos(i) ? 1.0 / tp : 0.0) - 1.0 / pred_sum;
      }
      // tp <= npos for one-hot targets, so |log recall| = -log recall.
      const double recall = tp / npos;
      sum += std::log(std::max(recall, kEps));
      ++terms;
      if (recall >= kEps)
        for (std::size_t i = 0; i < pred.voxels; ++i)
          if (included(mask, i) && is_pos(i)) d[i] += 1.0 / tp;
    }
    if (nneg > 0.0) {
      const double specificity = tn / nneg;
      sum += std::log(std::max(specificity, kEps));
      ++terms;
      if (specificity >= kEps)
        for (std::size_t i = 0; i < pred.voxels; ++i)
          if (included(mask, i) && !is_pos(i)) d[i] += -1.0 / tn;
    }
    if (terms == 0) continue;
    total += sum;
    ++active;
    res.defined_terms += static_cast<std::size_t>(terms);
    for (std::size_t i = 0; i < pred.voxels; ++i) {
      if (d[i] == 0.0) continue;
      if (mode == ScalMode::geometry)
        res.grad[i * nc + kFreeClass] -= d[i];
      else
        res.grad[i * nc + c] += d[i];
    }
  }
  if (active == 0) {
    std::fill(res.grad.begin(), res.grad.end(), 0.0);
    return res;
  }
  res.value = -total / active;
  for (double& g : res.grad) g *= -1.0 / active;
  return res;
}

namespace {

void log_softmax_row(std::span<const double> z, std::span<double> out) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  const double lse = m + std::log(s);
  for (std::size_t c = 0; c < z.size(); ++c) out[c] = z[c] - lse;
}

void check_logits(const VoxelMatrix& logits) {
  if (logits.classes < 1) throw ShapeError("logits need at least one class");
  for (double v : logits.values)
    if (!std::isfinite(v)) throw ValidationError("logits must be finite");
}

std::vector<double> resolve_weights(std::span<const double> weights, std::size_t classes) {
  if (weights.empty()) return std::vector<double>(classes, 1.0);
  if (weights.size() != classes) throw ShapeError("class weight count differs from class count");
  for (double w : weights)
    if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("class weights must be finite and nonnegative");
  return {weights.begin(), weights.end()};
}

}  // namespace

LossResult weighted_ce(const VoxelMatrix& logits, std::span<const Label> targets, std::span<const double> weights,
                       std::span<const std::uint8_t> mask) {
  check_logits(logits);
  check_mask(mask, logits.voxels);
  if (targets.size() != logits.voxels) throw ShapeError("weighted_ce: target count differs from voxel count");
  const std::size_t nc = logits.classes;
  const auto w = resolve_weights(weights, nc);
  LossResult res;
  res.grad.assign(logits.values.size(), 0.0);
  std::vector<double> logq(nc);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < logits.voxels; ++i) {
    if (!included(mask, i)) continue;
    if (targets[i] >= nc) throw ValidationError("weighted_ce: target class out of range");
    ++res.defined_terms;
    log_softmax_row(logits.row(i), logq);
    const double wi = w[targets[i]];
    num += -wi * logq[targets[i]];
    den += wi;
    for (std::size_t k = 0; k < nc; ++k)
      res.grad[i * nc + k] = wi * (std::exp(logq[k]) - (k == targets[i] ? 1.0 : 0.0));
  }
  if (res.defined_terms == 0) throw ValidationError("weighted_ce: no valid voxels");
  if (!(den > 0.0)) throw ValidationError("weighted_ce: applied weights sum to zero");
  res.value = num / den;
  for (double& g : res.grad) g /= den;
  return res;
}

LossResult weighted_ce(const VoxelMatrix& logits, const VoxelMatrix& targets, std::span<const double> weights,
                       std::span<const std::uint8_t> mask) {
  check_logits(logits);
  check_mask(mask, logits.voxels);
  if (targets.voxels != logits.voxels || targets.classes != logits.classes)
    throw ShapeError("weighted_ce: target shape differs from logits");
  check_probabilities(targets, "weighted_ce targets");
  const std::size_t nc = logits.classes;
  const auto w = resolve_weights(weights, nc);
  LossResult res;
  res.grad.assign(logits.values.size(), 0.0);
  std::vector<double> logq(nc);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < logits.voxels; ++i) {
    if (!included(mask, i)) continue;
    ++res.defined_terms;
    log_softmax_row(logits.row(i), logq);
    double applied = 0.0;
    for (std::size_t c = 0; c < nc; ++c) {
      const double wp = w[c] * targets.at(i, c);
      applied += wp;
      if (wp != 0.0) num += -wp * logq[c];
    }
    den += applied;
    for (std::size_t k = 0; k < nc; ++k)
      res.grad[i * nc + k] = applied * std::exp(logq[k]) - w[k] * targets.at(i, k);
  }
  if (res.defined_terms == 0) throw ValidationError("weighted_ce: no valid voxels");
  if (!(den > 0.0)) throw ValidationError("weighted_ce: applied weights sum to zero");
  res.value = num / den;
  for (double& g : res.grad) g /= den;
  return res;
}

LossResult split_bce(std::span<const double> scores, const SubdivisionMask& mask) {
  if (scores.size() != mask.size()) throw ShapeError("split_bce: score count differs from mask size");
  LossResult res;
  res.grad.assign(scores.size(), 0.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (mask.defined[i] == 0) continue;
    if (!std::isfinite(scores[i])) throw ValidationError("split_bce: non-finite score");
    ++res.defined_terms;
    const double s = std::clamp(scores[i], kEps, 1.0 - kEps);
    const bool clamped = s != scores[i];
    if (mask.requires_split[i] != 0) {
      sum += -std::log(s);
      if (!clamped) res.grad[i] = -1.0 / s;
    } else {
      sum += -std::log(1.0 - s);
      if (!clamped) res.grad[i] = 1.0 / (1.0 - s);
    }
  }
  if (res.defined_terms == 0) return res;
  const double n = static_cast<double>(res.defined_terms);
  res.value = sum / n;
  for (double& g : res.grad) g /= n;
  return res;
}

LossResult smooth_l1(std::span<const double> pred, std::span<const double> target, std::span<const std::uint8_t> mask) {
  if (pred.size() != target.size()) throw ShapeError("smooth_l1: pred and target sizes differ");
  check_mask(mask, pred.size());
  LossResult res;
  res.grad.assign(pred.size(), 0.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!included(mask, i)) continue;
    const double x = pred[i] - target[i];
    if (!std::isfinite(x)) throw ValidationError("smooth_l1: non-finite input");
    ++res.defined_terms;
    if (std::abs(x) < 1.0) {
      sum += 0.5 * x * x;
      res.grad[i] = x;
    } else {
      sum += std::abs(x) - 0.5;
      res.grad[i] = x > 0.0 ? 1.0 : -1.0;
    }
  }
  if (res.defined_terms == 0) throw ValidationError("smooth_l1: empty valid mask");
  const double n = static_cast<double>(res.defined_terms);
  res.value = sum / n;
  for (double& g : res.grad) g /= n;
  return res;
}

std::vector<double> class_frequency_weights(std::span<const std::size_t> class_counts) {
  double total = 0.0;
  for (auto c : class_counts) total += static_cast<double>(c);
  std::vector<double> w(class_counts.size());
  for (std::size_t c = 0; c < class_counts.size(); ++c) {
    const double f = total > 0.0 ? static_cast<double>(class_counts[c]) / total : 0.0;
    w[c] = 1.0 / std::log(1.02 + f);
  }
  return w;
}

std::vector<double> softmax_rows(const VoxelMatrix& logits) {
  std::vector<double> out(logits.values.size());
  for (std::size_t i = 0; i < logits.voxels; ++i) {
    std::span<double> row(out.data() + i * logits.classes, logits.classes);
    log_softmax_row(logits.row(i), row);
    for (double& v : row) v = std::exp(v);
  }
  return out;
}

std::vector<double> softmax_backward(const VoxelMatrix& logits, std::span<const double> grad_probs) {
  if (grad_probs.size() != logits.values.size()) throw ShapeError("softmax_backward: gradient size mismatch");
  const auto q = softmax_rows(logits);
  std::vector<double> g(q.size());
  const std::size_t nc = logits.classes;
  for (std::size_t i = 0; i < logits.voxels; ++i) {
    double inner = 0.0;
    for (std::size_t c = 0; c < nc; ++c) inner += grad_probs[i * nc + c] * q[i * nc + c];
    for (std::size_t c = 0; c < nc; ++c) g[i * nc + c] = q[i * nc + c] * (grad_probs[i * nc + c] - inner);
  }
  return g;
}

TotalLoss total_loss(const TotalLossInputs& in, const LossWeights& weights) {
  if (in.low_labels == nullptr || in.split_mask == nullptr) throw ShapeError("total_loss: missing low-level targets");
  const ClassHistogramGrid& low = *in.low_labels;
  if (in.low_logits.voxels != low.size() || in.low_logits.classes != static_cast<std::size_t>(low.num_classes))
    throw ShapeError("total_loss: low logits do not match the label grid");
  if (in.high_logits.voxels != in.child_labels.size() || in.child_valid.size() != in.child_labels.size())
    throw ShapeError("total_loss: high logits do not match the child labels");
  if (in.high_logits.voxels > 0 && in.high_logits.classes != in.low_logits.classes)
    throw ShapeError("total_loss: high and low logits disagree on class count");
  if (!(weights.lambda1 >= 0.0) || !(weights.lambda2 >= 0.0)) throw ValidationError("loss weights must be nonnegative");

  TotalLoss out;
  const std::size_t nc = in.low_logits.classes;
  const VoxelMatrix fractions(low.fractions, low.size(), nc);

  // L_low
  LossResult ce_low;
  if (weights.hard_low_targets) {
    std::vector<Label> hard(low.size(), 0);
    for (std::size_t i = 0; i < low.size(); ++i) {
      const auto r = low.row(i);
      hard[i] = static_cast<Label>(std::max_element(r.begin(), r.end()) - r.begin());
    }
    ce_low = weighted_ce(in.low_logits, hard, weights.ce_weights, low.defined);
  } else {
    ce_low = weighted_ce(in.low_logits, fractions, weights.ce_weights, low.defined);
  }
  const auto low_probs = softmax_rows(in.low_logits);
  const LossResult mc = multiclass_scal(VoxelMatrix(low_probs, low.size(), nc), fractions, ScalMode::geometry, low.defined);
  const auto mc_logit_grad = softmax_backward(in.low_logits, mc.grad);
  out.low_ce = ce_low.value;
  out.low_mc_geo = mc.value;
  out.low = weights.lambda1 * ce_low.value + weights.lambda2 * mc.value;
  out.grad_low_logits.resize(in.low_logits.values.size());
  for (std::size_t k = 0; k < out.grad_low_logits.size(); ++k)
    out.grad_low_logits[k] = weights.lambda1 * ce_low.grad[k] + weights.lambda2 * mc_logit_grad[k];

  // L_high
  out.grad_high_logits.assign(in.high_logits.values.size(), 0.0);
  const bool any_child =
      std::any_of(in.child_valid.begin(), in.child_valid.end(), [](std::uint8_t v) { return v != 0; });
  if (any_child) {
    const LossResult ce = weighted_ce(in.high_logits, in.child_labels, weights.ce_weights, in.child_valid);
    const auto probs = softmax_rows(in.high_logits);
    const VoxelMatrix pm(probs, in.high_logits.voxels, nc);
    const LossResult geo = scal_onehot(pm, in.child_labels, ScalMode::geometry, in.child_valid);
    const LossResult sem = scal_onehot(pm, in.child_labels, ScalMode::semantic, in.child_valid);
    std::vector<double> dprob(probs.size());
    for (std::size_t k = 0; k < dprob.size(); ++k) dprob[k] = geo.grad[k] + sem.grad[k];
    const auto dlogit = softmax_backward(in.high_logits, dprob);
    out.high_ce = ce.value;
    out.high_scal_geo = geo.value;
    out.high_scal_sem = sem.value;
    out.high = ce.value + geo.value + sem.value;
    for (std::size_t k = 0; k < dlogit.size(); ++k) out.grad_high_logits[k] = ce.grad[k] + dlogit[k];
  }

  // L_bce
  const LossResult bce = split_bce(in.split_scores, *in.split_mask);
  out.bce = bce.value;
  out.grad_split_scores = bce.grad;

  out.total = out.high + out.low + out.bce;
  return out;
}

}  // namespace hsocc::losses
