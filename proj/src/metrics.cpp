#include "hsocc/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <json.hpp>
#include <numeric>
#include <sstream>

#include "hsocc/errors.hpp"

namespace hsocc::metrics {

ConfusionMatrix::ConfusionMatrix(int num_classes) : n_(num_classes) {
  if (num_classes < 2) throw ValidationError("confusion matrix needs at least 2 classes");
  counts_.assign(static_cast<std::size_t>(num_classes) * num_classes, 0);
}

void ConfusionMatrix::add(int gt, int pred, std::uint64_t count) {
  if (gt < 0 || gt >= n_ || pred < 0 || pred >= n_)
    throw ValidationError("class id out of range: gt " + std::to_string(gt) + ", pred " + std::to_string(pred));
  counts_[static_cast<std::size_t>(gt) * n_ + pred] += count;
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

void ConfusionMatrix::accumulate(const SemanticGrid& pred, const SemanticGrid& gt) {
  if (!(pred.spec == gt.spec)) throw DimensionError("prediction and ground truth use different grids");
  if (pred.num_classes != n_ || gt.num_classes != n_) throw ValidationError("class count differs from the matrix");
  pred.validate();
  gt.validate();
  for (std::size_t i = 0; i < gt.size(); ++i)
    if (gt.valid[i] != 0) add(gt.labels[i], pred.labels[i]);
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (n_ == 0) return *this = other;
  if (other.n_ == 0) return *this;
  if (other.n_ != n_) throw ValidationError("cannot add confusion matrices of different sizes");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

ConfusionMatrix accumulate(const SemanticGrid& pred, const SemanticGrid& gt) {
  ConfusionMatrix cm(gt.num_classes);
  cm.accumulate(pred, gt);
  return cm;
}

namespace {

double ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

SscMetrics ssc_metrics(const ConfusionMatrix& cm) {
  if (cm.num_classes() == 0 || cm.total() == 0) throw ValidationError("confusion matrix is empty");
  const int n = cm.num_classes();
  SscMetrics m;
  m.voxels = cm.total();

  std::uint64_t tp = 0, fp = 0, fn = 0;
  for (int g = 0; g < n; ++g)
    for (int p = 0; p < n; ++p) {
      const std::uint64_t c = cm.at(g, p);
      const bool go = g != 0, po = p != 0;
      if (go && po) tp += c;
      if (!go && po) fp += c;
      if (go && !po) fn += c;
    }
  m.iou_occupancy = tp + fp + fn == 0 ? 1.0 : ratio(tp, tp + fp + fn);
  m.precision = ratio(tp, tp + fp);
  m.recall = ratio(tp, tp + fn);

  double sum = 0.0;
  int present = 0;
  for (int c = 1; c < n; ++c) {
    std::uint64_t row = 0, col = 0;
    for (int k = 0; k < n; ++k) {
      row += cm.at(c, k);
      col += cm.at(k, c);
    }
    const std::uint64_t t = cm.at(c, c);
    if (row + col == 0) {
      m.per_class_iou.emplace_back();
      continue;
    }
    const double iou = ratio(t, row + col - t);
    m.per_class_iou.emplace_back(iou);
    sum += iou;
    ++present;
  }
  m.miou = present == 0 ? 0.0 : sum / present;
  return m;
}

namespace {

std::string class_name(const std::vector<std::string>& names, std::size_t c) {
  return c < names.size() ? names[c] : std::to_string(c);
}

}  // namespace

std::string to_json(const SscMetrics& m, const std::vector<std::string>& class_names) {
  nlohmann::ordered_json j;
  j["voxels"] = m.voxels;
  j["iou_occupancy"] = m.iou_occupancy;
  j["precision"] = m.precision;
  j["recall"] = m.recall;
  j["miou"] = m.miou;
  nlohmann::ordered_json per = nlohmann::ordered_json::object();
  for (std::size_t k = 0; k < m.per_class_iou.size(); ++k) {
    const auto& v = m.per_class_iou[k];
    per[class_name(class_names, k + 1)] = v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
  }
  j["per_class_iou"] = per;
  return j.dump(2) + "\n";
}

std::string to_table(const SscMetrics& m, const std::vector<std::string>& class_names) {
  std::vector<std::string> head{"IoU", "mIoU"}, row;
  char buf[32];
  const auto pct = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
    return std::string(buf);
  };
  row.push_back(pct(m.iou_occupancy));
  row.push_back(pct(m.miou));
  for (std::size_t k = 0; k < m.per_class_iou.size(); ++k) {
    head.push_back(class_name(class_names, k + 1));
    row.push_back(m.per_class_iou[k] ? pct(*m.per_class_iou[k]) : "-");
  }
  std::ostringstream os;
  for (int r = 0; r < 2; ++r) {
    const auto& cells = r == 0 ? head : row;
    for (std::size_t k = 0; k < cells.size(); ++k) {
      const std::size_t w = std::max(head[k].size(), row[k].size());
      if (k > 0) os << "  ";
      os << std::string(w - cells[k].size(), ' ') << cells[k];
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace hsocc::metrics
