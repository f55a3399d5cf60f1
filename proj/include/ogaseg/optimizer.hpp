#pragma once

#include <vector>

#include "ogaseg/checkpoint.hpp"
#include "ogaseg/errors.hpp"

namespace ogaseg {

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 2e-4;
};

/// Velocity per parameter; lazily shaped on the first step.
template <typename T>
struct SgdState {
  std::vector<Tensor<T>> velocity;
};

/// Nesterov SGD with L2 weight decay:
///   d = g + wd * p
///   v <- mu * v - lr * d
///   p <- p + mu * v - lr * d
/// `grads[i] == nullptr` marks parameter i frozen: neither it nor its
/// velocity is touched.
template <typename T>
void sgd_nesterov_step(ParamStore<T>& params, const std::vector<const Tensor<T>*>& grads, SgdState<T>& state,
                       const SgdConfig& cfg) {
  if (grads.size() != params.size()) {
    throw ShapeError("sgd: " + std::to_string(grads.size()) + " gradients for " + std::to_string(params.size()) +
                     " parameters");
  }
  if (state.velocity.empty()) {
    for (const auto& p : params) state.velocity.emplace_back(p.value.shape(), T{0});
  }
  if (state.velocity.size() != params.size()) throw ShapeError("sgd: optimizer state does not match parameters");
  const T lr = static_cast<T>(cfg.lr), mu = static_cast<T>(cfg.momentum), wd = static_cast<T>(cfg.weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!grads[i]) continue;
    Tensor<T>& p = params[i].value;
    Tensor<T>& v = state.velocity[i];
    const Tensor<T>& g = *grads[i];
    if (g.shape() != p.shape() || v.shape() != p.shape()) {
      throw ShapeError("sgd: parameter " + params[i].name + " " + shape_str(p.shape()) + " vs gradient " +
                       shape_str(g.shape()));
    }
    for (std::size_t k = 0; k < p.size(); ++k) {
      const T d = g[k] + wd * p[k];
      v[k] = mu * v[k] - lr * d;
      p[k] += mu * v[k] - lr * d;
    }
  }
}

}  // namespace ogaseg
