#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "ogaseg/errors.hpp"
#include "ogaseg/geometry.hpp"

namespace ogaseg {

/// counts[g * classes + p]: rows are ground truth, columns prediction.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {}

  static ConfusionMatrix from_rows(const std::vector<std::vector<std::uint64_t>>& rows) {
    ConfusionMatrix cm(rows.size());
    for (std::size_t g = 0; g < rows.size(); ++g) {
      if (rows[g].size() != rows.size()) throw ShapeError("confusion matrix must be square");
      for (std::size_t p = 0; p < rows.size(); ++p) cm.at(g, p) = rows[g][p];
    }
    return cm;
  }

  std::size_t classes() const { return classes_; }
  std::uint64_t& at(std::size_t g, std::size_t p) { return counts_[g * classes_ + p]; }
  std::uint64_t at(std::size_t g, std::size_t p) const { return counts_[g * classes_ + p]; }

  std::uint64_t total() const {
    std::uint64_t n = 0;
    for (auto c : counts_) n += c;
    return n;
  }

  void accumulate(const LabelMap& pred, const LabelMap& gt) {
    if (pred.height != gt.height || pred.width != gt.width) {
      throw ShapeError("accumulate: prediction " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                       " vs ground truth " + std::to_string(gt.height) + "x" + std::to_string(gt.width));
    }
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (gt.data[i] >= classes_ || pred.data[i] >= classes_) {
        throw std::out_of_range("accumulate: label " + std::to_string(std::max(gt.data[i], pred.data[i])) +
                                " outside [0," + std::to_string(classes_) + ")");
      }
      ++at(gt.data[i], pred.data[i]);
    }
  }

  ConfusionMatrix& merge(const ConfusionMatrix& other) {
    if (other.classes_ != classes_) throw ShapeError("merge: class counts differ");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    return *this;
  }

 private:
  std::size_t classes_ = 0;
  std::vector<std::uint64_t> counts_;
};

inline ConfusionMatrix accumulate(ConfusionMatrix cm, const LabelMap& pred, const LabelMap& gt) {
  cm.accumulate(pred, gt);
  return cm;
}

struct Metrics {
  double overall_acc = 0;  // trace / sum
  // Sum of per-class accuracies, the unnormalised reading kept for audit.
  double overall_acc_literal = 0;
  std::vector<std::optional<double>> class_acc;  // empty when the class has no ground-truth pixels
  std::vector<std::optional<double>> class_iou;  // empty when absent from both gt and prediction
  double mean_class_acc = 0;
  double mean_iou = 0;
};

inline Metrics metrics(const ConfusionMatrix& cm) {
  const std::size_t c = cm.classes();
  const std::uint64_t total = cm.total();
  if (c == 0 || total == 0) throw std::invalid_argument("metrics: empty confusion matrix");
  Metrics m;
  m.class_acc.resize(c);
  m.class_iou.resize(c);
  std::uint64_t trace = 0;
  std::size_t n_acc = 0, n_iou = 0;
  for (std::size_t j = 0; j < c; ++j) {
    std::uint64_t gt = 0, pred = 0;
    for (std::size_t k = 0; k < c; ++k) {
      gt += cm.at(j, k);
      pred += cm.at(k, j);
    }
    const std::uint64_t hit = cm.at(j, j);
    trace += hit;
    if (gt) {
      m.class_acc[j] = static_cast<double>(hit) / static_cast<double>(gt);
      m.overall_acc_literal += *m.class_acc[j];
      m.mean_class_acc += *m.class_acc[j];
      ++n_acc;
    }
    if (gt + pred) {
      m.class_iou[j] = static_cast<double>(hit) / static_cast<double>(gt + pred - hit);
      m.mean_iou += *m.class_iou[j];
      ++n_iou;
    }
  }
  m.overall_acc = static_cast<double>(trace) / static_cast<double>(total);
  if (n_acc) m.mean_class_acc /= static_cast<double>(n_acc);
  if (n_iou) m.mean_iou /= static_cast<double>(n_iou);
  return m;
}

/// Fraction of room instances whose predicted room classes are unanimous.
/// Background predictions (no room class) and pixels with a nonzero `ignore`
/// entry (typically predicted wall or door) do not vote; an instance with no
/// voting pixel counts as inconsistent.
inline double room_consistency(const LabelMap& pred, const RoomInstanceMap& instances,
                               std::span<const std::uint8_t> ignore = {}) {
  if (pred.height != instances.height() || pred.width != instances.width()) {
    throw ShapeError("room_consistency: prediction and instance map differ in size");
  }
  if (!ignore.empty() && ignore.size() != pred.size()) throw ShapeError("room_consistency: ignore mask size mismatch");
  const std::size_t n = instances.count();
  if (n == 0) throw std::invalid_argument("room_consistency: no room instances");
  std::vector<std::set<std::uint8_t>> seen(n);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto id = instances.ids().data[i];
    if (!id || !pred.data[i] || (!ignore.empty() && ignore[i])) continue;
    seen[id - 1].insert(pred.data[i]);
  }
  std::size_t ok = 0;
  for (const auto& s : seen) ok += s.size() == 1 ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(n);
}

}  // namespace ogaseg
