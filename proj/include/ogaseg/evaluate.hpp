#pragma once

// Evaluation over a set of samples. Predictions are scored on the combined
// palette map (predicted wall/door wins over the room class), with each
// branch also scored on its own. Room consistency ignores pixels predicted as
// wall or door, since those carry no room label in the combined map.

#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ogaseg/metrics.hpp"
#include "ogaseg/network.hpp"
#include "ogaseg/palette.hpp"
#include "ogaseg/synth.hpp"

namespace ogaseg {

struct EvalOptions {
  bool flood_fill = false;    // also score the flood-fill post-processed rooms
  bool ground_truth = false;  // feed ground truth as the prediction (oracle check)
};

struct EvalScores {
  ConfusionMatrix combined{kPaletteSize};
  ConfusionMatrix room{kRoomClasses};
  ConfusionMatrix boundary{kBoundaryClasses};
  double consistency_sum = 0;
  std::size_t samples = 0;

  double room_consistency() const { return samples ? consistency_sum / static_cast<double>(samples) : 0.0; }
};

struct EvalReport {
  EvalScores raw;
  std::optional<EvalScores> flood_fill;
};

struct Prediction {
  LabelMap rooms;
  LabelMap bounds;
};

template <typename T>
Prediction predict(const Model<T>& model, const Tensor<T>& image) {
  const auto out = model.forward_full(image);
  return {argmax_labels(out.room_logits), argmax_labels(out.boundary_logits)};
}

inline LabelMap combine_labels(const LabelMap& rooms, const LabelMap& bounds) {
  LabelMap out(rooms.height, rooms.width, 0);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = merge_labels(rooms.data[i], bounds.data[i]);
  return out;
}

inline void score(EvalScores& s, const Prediction& p, const FloorPlanSample& gt) {
  s.combined.accumulate(combine_labels(p.rooms, p.bounds), combine_labels(gt.room_labels, gt.boundary_labels));
  s.room.accumulate(p.rooms, gt.room_labels);
  s.boundary.accumulate(p.bounds, gt.boundary_labels);
  s.consistency_sum += room_consistency(p.rooms, gt.instances, std::span<const std::uint8_t>(p.bounds.data));
  ++s.samples;
}

inline void check_compatible(const ModelConfig& cfg, const FloorPlanSample& s) {
  if (cfg.num_room_classes != kRoomClasses || cfg.num_boundary_classes != kBoundaryClasses) {
    throw ConfigError("checkpoint predicts " + std::to_string(cfg.num_room_classes) + " room and " +
                      std::to_string(cfg.num_boundary_classes) + " boundary classes; the palette defines " +
                      std::to_string(kRoomClasses) + " and " + std::to_string(kBoundaryClasses));
  }
  if (s.height % cfg.stride() || s.width % cfg.stride()) {
    throw ShapeError("sample size " + std::to_string(s.height) + "x" + std::to_string(s.width) +
                     " is not a multiple of the model stride");
  }
}

/// `model` may be null only with `opt.ground_truth`.
template <typename T>
EvalReport evaluate(const Model<T>* model, const std::vector<FloorPlanSample>& data, const EvalOptions& opt = {}) {
  if (data.empty()) throw std::invalid_argument("evaluate: no samples");
  if (!model && !opt.ground_truth) throw std::invalid_argument("evaluate: no model given");
  EvalReport report;
  if (opt.flood_fill) report.flood_fill.emplace();
  for (const auto& s : data) {
    Prediction p;
    if (opt.ground_truth) {
      p = {s.room_labels, s.boundary_labels};
    } else {
      check_compatible(model->config(), s);
      p = predict(*model, image_tensor<T>(s));
    }
    score(report.raw, p, s);
    if (report.flood_fill) score(*report.flood_fill, {flood_fill_vote(p.rooms, p.bounds), p.bounds}, s);
  }
  return report;
}

template <typename T>
EvalReport evaluate(const Model<T>& model, const std::vector<FloorPlanSample>& data, const EvalOptions& opt = {}) {
  return evaluate(&model, data, opt);
}

namespace eval_detail {

inline std::string fmt(std::optional<double> v) {
  if (!v) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(6) << *v;
  return os.str();
}

inline void add_scores(KeyValues& kv, const std::string& prefix, const EvalScores& s) {
  const Metrics m = metrics(s.combined);
  kv[prefix + "overall_acc"] = fmt(m.overall_acc);
  kv[prefix + "overall_acc_literal"] = fmt(m.overall_acc_literal);
  kv[prefix + "mean_class_acc"] = fmt(m.mean_class_acc);
  kv[prefix + "mean_iou"] = fmt(m.mean_iou);
  kv[prefix + "room_consistency"] = fmt(s.room_consistency());
  for (std::size_t c = 0; c < kPaletteSize; ++c) {
    kv[prefix + "class_acc." + std::string(kPalette[c].name)] = fmt(m.class_acc[c]);
    kv[prefix + "iou." + std::string(kPalette[c].name)] = fmt(m.class_iou[c]);
  }
  const Metrics r = metrics(s.room), b = metrics(s.boundary);
  kv[prefix + "room_branch.overall_acc"] = fmt(r.overall_acc);
  kv[prefix + "room_branch.mean_iou"] = fmt(r.mean_iou);
  kv[prefix + "boundary_branch.overall_acc"] = fmt(b.overall_acc);
  kv[prefix + "boundary_branch.mean_iou"] = fmt(b.mean_iou);
}

}  // namespace eval_detail

inline KeyValues report_key_values(const EvalReport& r) {
  KeyValues kv;
  kv["samples"] = std::to_string(r.raw.samples);
  eval_detail::add_scores(kv, "", r.raw);
  if (r.flood_fill) eval_detail::add_scores(kv, "flood_fill.", *r.flood_fill);
  return kv;
}

inline std::string report_table(const EvalReport& r) {
  using eval_detail::fmt;
  const Metrics m = metrics(r.raw.combined);
  std::optional<Metrics> f;
  if (r.flood_fill) f = metrics(r.flood_fill->combined);
  std::ostringstream os;
  auto row = [&](const std::string& name, std::optional<double> a, std::optional<double> b) {
    os << std::left << std::setw(22) << name << std::right << std::setw(10) << fmt(a);
    if (f) os << std::setw(12) << fmt(b);
    os << '\n';
  };
  os << "samples: " << r.raw.samples << '\n';
  os << std::left << std::setw(22) << "metric" << std::right << std::setw(10) << "raw";
  if (f) os << std::setw(12) << "flood-fill";
  os << '\n';
  row("overall_acc", m.overall_acc, f ? std::optional(f->overall_acc) : std::nullopt);
  row("mean_class_acc", m.mean_class_acc, f ? std::optional(f->mean_class_acc) : std::nullopt);
  row("mean_iou", m.mean_iou, f ? std::optional(f->mean_iou) : std::nullopt);
  row("room_consistency", r.raw.room_consistency(),
      r.flood_fill ? std::optional(r.flood_fill->room_consistency()) : std::nullopt);
  for (std::size_t c = 0; c < kPaletteSize; ++c) {
    row("acc " + std::string(kPalette[c].name), m.class_acc[c], f ? f->class_acc[c] : std::nullopt);
  }
  for (std::size_t c = 0; c < kPaletteSize; ++c) {
    row("iou " + std::string(kPalette[c].name), m.class_iou[c], f ? f->class_iou[c] : std::nullopt);
  }
  return os.str();
}

}  // namespace ogaseg
