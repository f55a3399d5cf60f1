#pragma once

// Finite-difference checks for every differentiable primitive and for the
// whole model on a small input, all in double precision. Each primitive is
// checked as op -> sigmoid -> random weighted sum, so every output element
// receives a distinct upstream gradient.

#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "ogaseg/attention.hpp"
#include "ogaseg/fusion.hpp"
#include "ogaseg/grad_check.hpp"
#include "ogaseg/losses.hpp"
#include "ogaseg/network.hpp"
#include "ogaseg/palette.hpp"

namespace ogaseg {

struct GradSuiteEntry {
  std::string name;
  double tol = 1e-4;
  GradCheckReport<double> report;
  bool passed = false;
};

struct GradSuiteResult {
  std::vector<GradSuiteEntry> entries;
  bool passed() const {
    for (const auto& e : entries)
      if (!e.passed) return false;
    return !entries.empty();
  }
};

namespace grad_suite_detail {

using Fn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

inline Tensor<double> random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.vec()) v = rng.uniform(lo, hi);
  return t;
}

// sum(sigmoid(y) * R) with R fixed by the seed.
inline Var<double> project(Tape<double>& tape, Var<double> y, std::uint64_t seed) {
  Rng rng(seed);
  const Var<double> r = tape.constant(random_tensor(rng, y.shape()));
  return ops::sum(ops::mul(ops::sigmoid(y), r));
}

/// Compact model used for the end-to-end check: 16x16 input, 2x2 feature map.
inline ModelConfig compact_model_config() {
  ModelConfig c;
  c.input_size = 16;
  c.backbone_channels = {4, 6, 8};
  c.branch_channels = 4;
  return c;
}

}  // namespace grad_suite_detail

/// End-to-end loss of `model` over bound parameters `p`: room CE + boundary
/// CE + offset L1 against random targets.
struct EndToEndCase {
  Model<double> model;
  Tensor<double> image;
  LabelMap rooms, bounds;
  OffsetField offsets;
};

inline EndToEndCase make_end_to_end_case(std::uint64_t seed) {
  using namespace grad_suite_detail;
  Rng rng(seed);
  EndToEndCase c{Model<double>::build(compact_model_config(), seed), {}, {}, {}, {}};
  // Fusion parameters start at zero; move them off that point so the gate's
  // weight path is exercised with non-trivial values.
  for (auto& p : c.model.params()) {
    if (p.name.rfind("ffa.", 0) == 0)
      for (auto& v : p.value.vec()) v = rng.uniform(-0.5, 0.5);
    if (p.name.size() > 5 && p.name.substr(p.name.size() - 5) == ".bias")
      for (auto& v : p.value.vec()) v = rng.uniform(-0.1, 0.1);
  }
  const std::size_t s = c.model.config().input_size;
  c.image = random_tensor(rng, {3, s, s}, -0.5, 0.5);
  c.rooms = LabelMap(s, s, 0);
  c.bounds = LabelMap(s, s, 0);
  for (auto& v : c.rooms.data) v = static_cast<std::uint8_t>(rng.integer(0, static_cast<long>(kRoomClasses) - 1));
  for (auto& v : c.bounds.data) v = static_cast<std::uint8_t>(rng.integer(0, static_cast<long>(kBoundaryClasses) - 1));
  const std::size_t f = s / 8;
  c.offsets = OffsetField(f, f);
  for (std::size_t i = 0; i < c.offsets.size(); ++i) {
    c.offsets.dy[i] = rng.uniform(-1.5, 1.5);
    c.offsets.dx[i] = rng.uniform(-1.5, 1.5);
    c.offsets.valid[i] = 1;
  }
  return c;
}

inline Var<double> end_to_end_loss(const EndToEndCase& c, const std::vector<Var<double>>& p, Var<double> image) {
  const auto out = c.model.forward(p, image);
  const ClassWeights rw = ClassWeights::from_labels({&c.rooms}, kRoomClasses, WeightMode::inverse_frequency);
  const ClassWeights bw = ClassWeights::from_labels({&c.bounds}, kBoundaryClasses, WeightMode::inverse_frequency);
  const Var<double> ls = ops::add(weighted_ce(out.room_logits, c.rooms, rw), weighted_ce(out.boundary_logits, c.bounds, bw));
  return total_loss(ls, offset_l1(out.offsets, c.offsets));
}

/// Runs the suite; `progress` receives one line per check.
inline GradSuiteResult run_grad_suite(std::ostream* progress = nullptr, bool end_to_end = true,
                                      std::uint64_t seed = 1) {
  using namespace grad_suite_detail;
  GradSuiteResult result;
  Rng rng(seed);
  auto check = [&](const std::string& name, std::vector<Tensor<double>> inputs, Fn f, double tol = 1e-4) {
    GradCheckOptions opt;
    opt.tol = tol;
    GradSuiteEntry e;
    e.name = name;
    e.tol = tol;
    e.report = grad_check<double>(f, inputs, opt);
    e.passed = e.report.passed && e.report.checked > 0;
    if (progress) {
      *progress << (e.passed ? "ok   " : "FAIL ") << name << "  max_rel_err " << e.report.max_rel_error << "  checked "
                << e.report.checked << "  kinks " << e.report.skipped << '\n';
    }
    result.entries.push_back(std::move(e));
  };
  const std::uint64_t r = rng.next();
  auto unary = [&](const std::string& name, Shape shape, std::function<Var<double>(Var<double>)> op) {
    check(name, {random_tensor(rng, shape)},
          [op, r](Tape<double>& t, const std::vector<Var<double>>& v) { return project(t, op(v[0]), r); });
  };
  auto binary = [&](const std::string& name, Shape a, Shape b,
                    std::function<Var<double>(Var<double>, Var<double>)> op) {
    check(name, {random_tensor(rng, a), random_tensor(rng, b)},
          [op, r](Tape<double>& t, const std::vector<Var<double>>& v) { return project(t, op(v[0], v[1]), r); });
  };

  unary("relu", {3, 4, 5}, [](Var<double> x) { return ops::relu(x); });
  unary("sigmoid", {3, 4, 5}, [](Var<double> x) { return ops::sigmoid(x); });
  binary("add", {2, 3, 4}, {2, 3, 4}, [](Var<double> a, Var<double> b) { return ops::add(a, b); });
  binary("sub", {2, 3, 4}, {2, 3, 4}, [](Var<double> a, Var<double> b) { return ops::sub(a, b); });
  binary("mul", {2, 3, 4}, {2, 3, 4}, [](Var<double> a, Var<double> b) { return ops::mul(a, b); });
  unary("scale", {2, 3, 4}, [](Var<double> x) { return ops::scale(x, -1.7); });
  unary("sum", {2, 3, 4}, [](Var<double> x) { return ops::reshape(ops::sum(x), {1}); });
  unary("mean", {2, 3, 4}, [](Var<double> x) { return ops::reshape(ops::mean(x), {1}); });
  unary("reshape", {2, 3, 4}, [](Var<double> x) { return ops::reshape(x, {4, 6}); });
  binary("concat_channels", {2, 3, 3}, {3, 3, 3},
         [](Var<double> a, Var<double> b) { return ops::concat_channels<double>({a, b, a}); });
  unary("slice_channels", {5, 3, 3}, [](Var<double> x) { return ops::slice_channels(x, 1, 4); });
  binary("matmul", {3, 4}, {4, 5}, [](Var<double> a, Var<double> b) { return ops::matmul(a, b); });
  for (std::size_t axis = 0; axis < 3; ++axis) {
    unary("softmax axis " + std::to_string(axis), {3, 4, 5},
          [axis](Var<double> x) { return ops::softmax(x, axis, 1.0); });
  }
  unary("softmax temperature 0.5", {3, 4, 5}, [](Var<double> x) { return ops::softmax(x, 2, 0.5); });
  unary("global_avg_pool", {4, 3, 5}, [](Var<double> x) { return ops::global_avg_pool(x); });
  unary("global_max_pool", {4, 3, 5}, [](Var<double> x) { return ops::global_max_pool(x); });
  binary("mul_channel", {4, 3, 5}, {4}, [](Var<double> x, Var<double> w) { return ops::mul_channel(x, w); });
  unary("upsample_bilinear x8", {2, 2, 3}, [](Var<double> x) { return ops::upsample_bilinear(x, 8); });
  unary("upsample_bilinear x2", {2, 3, 3}, [](Var<double> x) { return ops::upsample_bilinear(x, 2); });
  for (auto [stride, pad, k] : {std::tuple<std::size_t, std::size_t, std::size_t>{1, 1, 3}, {2, 1, 3}, {1, 0, 1}}) {
    check("conv2d k" + std::to_string(k) + " stride " + std::to_string(stride) + " pad " + std::to_string(pad),
          {random_tensor(rng, {3, 6, 6}), random_tensor(rng, {4, 3, k, k}), random_tensor(rng, {4})},
          [stride, pad, r](Tape<double>& t, const std::vector<Var<double>>& v) {
            return project(t, ops::conv2d(v[0], v[1], v[2], stride, pad), r);
          });
  }
  {
    Tensor<double> target = random_tensor(rng, {2, 3, 4});
    std::vector<std::uint8_t> valid(12);
    for (auto& m : valid) m = rng.uniform() < 0.7 ? 1 : 0;
    check("masked_l1_mean", {random_tensor(rng, {2, 3, 4})},
          [target, valid](Tape<double>&, const std::vector<Var<double>>& v) {
            return ops::masked_l1_mean(v[0], target, std::span<const std::uint8_t>(valid));
          });
  }
  {
    std::vector<std::uint8_t> labels(20), mask(20);
    for (auto& l : labels) l = static_cast<std::uint8_t>(rng.integer(0, 3));
    for (auto& m : mask) m = rng.uniform() < 0.8 ? 1 : 0;
    const std::vector<double> w{0.1, 0.2, 0.3, 0.4};
    check("weighted_cross_entropy", {random_tensor(rng, {4, 4, 5}, -2, 2)},
          [labels, mask, w](Tape<double>&, const std::vector<Var<double>>& v) {
            return ops::weighted_cross_entropy(v[0], std::span<const std::uint8_t>(labels), w,
                                               std::span<const std::uint8_t>(mask));
          });
  }
  unary("affinity_scores", {2, 3, 4}, [](Var<double> o) {
    return ops::scale(attention::affinity_scores(o, AffinityMode::offset_guided), 0.1);
  });
  binary("aggregate", {3, 3, 4}, {3, 4, 6}, [](Var<double> f, Var<double> a) { return attention::aggregate(f, a); });
  for (bool softmax : {true, false}) {
    AttentionConfig cfg;
    cfg.use_softmax = softmax;
    binary(std::string("oga_module") + (softmax ? "" : " without softmax"), {3, 3, 4}, {2, 3, 4},
           [cfg](Var<double> f, Var<double> o) {
             // unnormalised scores reach |d|^2 per neighbour; keep the sigmoid out of saturation
             return ops::scale(attention::oga_module(f, ops::scale(o, 0.5), cfg), cfg.use_softmax ? 1.0 : 1e-3);
           });
  }
  for (PoolMode pool : {PoolMode::avg, PoolMode::max}) {
    FusionConfig cfg;
    cfg.pool = pool;
    check(std::string("ffa_module ") + (pool == PoolMode::avg ? "avg" : "max"),
          {random_tensor(rng, {3, 3, 4}), random_tensor(rng, {3, 3, 4}), random_tensor(rng, {6, 6}),
           random_tensor(rng, {6})},
          [cfg, r](Tape<double>& t, const std::vector<Var<double>>& v) {
            const auto out = ffa_module(v[0], v[1], v[2], v[3], cfg);
            return ops::add(project(t, out.room, r), project(t, out.boundary, r + 1));
          });
  }
  if (end_to_end) {
    const EndToEndCase c = make_end_to_end_case(seed);
    std::vector<Tensor<double>> inputs{c.image};
    for (const auto& p : c.model.params()) inputs.push_back(p.value);
    check(
        "end-to-end model 16x16", inputs,
        [&c](Tape<double>&, const std::vector<Var<double>>& v) {
          return end_to_end_loss(c, std::vector<Var<double>>(v.begin() + 1, v.end()), v[0]);
        },
        1e-3);
  }
  return result;
}

}  // namespace ogaseg
