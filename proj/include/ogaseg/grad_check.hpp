#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "ogaseg/errors.hpp"
#include "ogaseg/random.hpp"
#include "ogaseg/tape.hpp"

namespace ogaseg {

struct GradCheckOptions {
  double step = 1e-5;
  double tol = 1e-4;
  // Denominator floor for the relative error, so gradients that are zero up to
  // finite-difference noise do not blow the ratio up.
  double abs_floor = 1e-6;
  // 0 probes every element; otherwise a seeded subset of this many per input.
  std::size_t max_elements_per_input = 0;
  std::uint64_t sample_seed = 0;
};

template <typename T>
struct GradCheckEntry {
  std::size_t input = 0;
  std::size_t index = 0;
  T analytic{0};
  T numeric{0};
  T rel_error{0};
  bool nondifferentiable = false;
};

template <typename T>
struct GradCheckReport {
  std::vector<GradCheckEntry<T>> entries;
  T max_rel_error{0};
  std::size_t checked = 0;
  std::size_t skipped = 0;
  bool passed = true;

  const GradCheckEntry<T>* worst() const {
    const GradCheckEntry<T>* w = nullptr;
    for (const auto& e : entries) {
      if (!e.nondifferentiable && (!w || e.rel_error > w->rel_error)) w = &e;
    }
    return w;
  }
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences. `f(tape, vars)` must return a scalar Var. Elements whose ±step
/// probes change the branch taken by any non-smooth op (relu sign, max index,
/// abs sign) are reported as non-differentiable and excluded from the verdict.
template <typename T, typename F>
GradCheckReport<T> grad_check(F&& f, const std::vector<Tensor<T>>& inputs, const GradCheckOptions& opt = {}) {
  GradCheckReport<T> report;

  Tape<T> base;
  base.record_branches = true;
  std::vector<Var<T>> vars;
  for (const auto& x : inputs) vars.push_back(base.leaf(x, true));
  Var<T> out = f(base, vars);
  if (out.value().size() != 1) {
    throw ShapeError("grad_check: function must be scalar-valued, got " + shape_str(out.shape()));
  }
  const std::vector<std::uint32_t> base_branches = base.branches;
  base.backward(out);

  auto probe = [&](std::size_t which, std::size_t index, T delta, std::vector<std::uint32_t>& sig) {
    Tape<T> tape;
    tape.record_branches = true;
    std::vector<Var<T>> vs;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      Tensor<T> x = inputs[i];
      if (i == which) x[index] += delta;
      vs.push_back(tape.constant(std::move(x)));
    }
    T value{0};
    try {
      value = f(tape, vs).value().item();
    } catch (const NumericError& e) {
      throw NumericError(std::string("grad_check: non-finite intermediate while probing input ") +
                         std::to_string(which) + " element " + std::to_string(index) + ": " + e.what());
    }
    sig = std::move(tape.branches);
    return value;
  };

  Rng rng(opt.sample_seed);
  const T h = static_cast<T>(opt.step);
  for (std::size_t which = 0; which < inputs.size(); ++which) {
    const Tensor<T> g = base.grad(vars[which]);
    std::vector<std::size_t> idx(inputs[which].size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (opt.max_elements_per_input && idx.size() > opt.max_elements_per_input) {
      for (std::size_t i = 0; i < opt.max_elements_per_input; ++i) {
        std::swap(idx[i], idx[i + static_cast<std::size_t>(rng.integer(0, static_cast<long>(idx.size() - i - 1)))]);
      }
      idx.resize(opt.max_elements_per_input);
      std::sort(idx.begin(), idx.end());
    }
    for (std::size_t index : idx) {
      GradCheckEntry<T> e;
      e.input = which;
      e.index = index;
      e.analytic = g[index];
      std::vector<std::uint32_t> sp, sm;
      const T fp = probe(which, index, h, sp);
      const T fm = probe(which, index, -h, sm);
      e.numeric = (fp - fm) / (T{2} * h);
      if (sp != base_branches || sm != base_branches) {
        e.nondifferentiable = true;
        ++report.skipped;
      } else {
        const T denom = std::max({std::abs(e.analytic), std::abs(e.numeric), static_cast<T>(opt.abs_floor)});
        e.rel_error = std::abs(e.analytic - e.numeric) / denom;
        report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
        ++report.checked;
      }
      report.entries.push_back(e);
    }
  }
  report.passed = report.max_rel_error < static_cast<T>(opt.tol);
  return report;
}

/// Single-input convenience overload; `f(tape, x)` returns a scalar Var.
template <typename T, typename F>
GradCheckReport<T> grad_check(F&& f, const Tensor<T>& x, const GradCheckOptions& opt = {}) {
  return grad_check<T>([&](Tape<T>& tape, const std::vector<Var<T>>& v) { return f(tape, v[0]); },
                       std::vector<Tensor<T>>{x}, opt);
}

}  // namespace ogaseg
