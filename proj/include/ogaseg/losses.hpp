#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ogaseg/geometry.hpp"
#include "ogaseg/ops.hpp"

namespace ogaseg {

enum class WeightMode { paper_literal, inverse_frequency };

inline std::string to_string(WeightMode m) {
  return m == WeightMode::paper_literal ? "paper_literal" : "inverse_frequency";
}

inline WeightMode weight_mode_from_string(const std::string& s) {
  if (s == "paper_literal") return WeightMode::paper_literal;
  if (s == "inverse_frequency") return WeightMode::inverse_frequency;
  throw ConfigError("class weight mode must be paper_literal or inverse_frequency, got '" + s + "'");
}

/// Per-class loss weights. Classes that never occur get weight 0.
///   paper_literal:     w_i = V_i / V_total
///   inverse_frequency: w_i proportional to V_total / V_i, summing to the
///                      number of classes present
struct ClassWeights {
  WeightMode mode = WeightMode::paper_literal;
  std::vector<double> w;

  static ClassWeights from_counts(const std::vector<std::uint64_t>& counts, WeightMode mode) {
    ClassWeights cw;
    cw.mode = mode;
    cw.w.assign(counts.size(), 0.0);
    std::uint64_t total = 0;
    std::size_t present = 0;
    for (auto c : counts) {
      total += c;
      present += c ? 1 : 0;
    }
    if (total == 0) throw std::invalid_argument("class weights: no labelled pixels");
    if (mode == WeightMode::paper_literal) {
      for (std::size_t i = 0; i < counts.size(); ++i) cw.w[i] = static_cast<double>(counts[i]) / static_cast<double>(total);
    } else {
      double s = 0;
      for (std::size_t i = 0; i < counts.size(); ++i) {
        if (counts[i]) s += cw.w[i] = static_cast<double>(total) / static_cast<double>(counts[i]);
      }
      for (auto& v : cw.w) v *= static_cast<double>(present) / s;
    }
    return cw;
  }

  /// Counts over a set of label maps; labels >= num_classes are an error.
  static ClassWeights from_labels(const std::vector<const LabelMap*>& maps, std::size_t num_classes, WeightMode mode) {
    std::vector<std::uint64_t> counts(num_classes, 0);
    for (const LabelMap* m : maps) {
      for (auto v : m->data) {
        if (v >= num_classes) {
          throw std::out_of_range("class weights: label " + std::to_string(v) + " outside [0," +
                                  std::to_string(num_classes) + ")");
        }
        ++counts[v];
      }
    }
    return from_counts(counts, mode);
  }

  static ClassWeights uniform(std::size_t num_classes) {
    ClassWeights cw;
    cw.w.assign(num_classes, 1.0);
    return cw;
  }

  template <typename T>
  std::vector<T> as() const {
    return std::vector<T>(w.begin(), w.end());
  }
};

/// Mean over unmasked pixels of -w[y] log softmax(logits)[y].
template <typename T>
Var<T> weighted_ce(Var<T> logits, const LabelMap& labels, const ClassWeights& weights,
                   std::span<const std::uint8_t> ignore_mask = {}) {
  if (logits.shape().size() != 3 || logits.shape()[1] != labels.height || logits.shape()[2] != labels.width) {
    throw ShapeError("weighted_ce: logits " + shape_str(logits.shape()) + " vs labels " +
                     std::to_string(labels.height) + "x" + std::to_string(labels.width));
  }
  std::vector<std::uint8_t> keep;
  if (!ignore_mask.empty()) {
    keep.resize(ignore_mask.size());
    for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = ignore_mask[i] ? 0 : 1;
  }
  return ops::weighted_cross_entropy(logits, std::span<const std::uint8_t>(labels.data), weights.as<T>(),
                                     std::span<const std::uint8_t>(keep));
}

/// Mean over valid ground-truth pixels of |gy - oy| + |gx - ox|. Sets
/// `*no_valid` when the mean is empty and the loss is 0 by convention.
template <typename T>
Var<T> offset_l1(Var<T> pred, const OffsetField& gt, bool* no_valid = nullptr) {
  if (pred.shape() != Shape{2, gt.height, gt.width}) {
    throw ShapeError("offset_l1: prediction " + shape_str(pred.shape()) + " vs ground truth " +
                     shape_str({2, gt.height, gt.width}));
  }
  bool any = false;
  for (auto v : gt.valid) any = any || v;
  if (no_valid) *no_valid = !any;
  return ops::masked_l1_mean(pred, gt.as_tensor<T>(), std::span<const std::uint8_t>(gt.valid));
}

/// Plain-value variant for two offset fields.
inline double offset_l1(const OffsetField& pred, const OffsetField& gt, bool* no_valid = nullptr) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw ShapeError("offset_l1: resolution " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                     " vs " + std::to_string(gt.height) + "x" + std::to_string(gt.width));
  }
  Tape<double> tape;
  return offset_l1(tape.constant(pred.as_tensor<double>()), gt, no_valid).value().item();
}

/// L_s + L_o.
template <typename T>
Var<T> total_loss(Var<T> ls, Var<T> lo) {
  if (ls.value().size() != 1 || lo.value().size() != 1) throw ShapeError("total_loss expects two scalars");
  return ops::add(ls, lo);
}

}  // namespace ogaseg
