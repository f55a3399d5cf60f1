#pragma once

// Channel-gated fusion of the room and boundary branches: concat, global
// pool, one affine 2d -> 2d transform, sigmoid gate, channel rescale, and the
// gated halves added back onto their originating branches.

#include "ogaseg/ops.hpp"

namespace ogaseg {

enum class PoolMode { avg, max };
enum class FusionBranch { room, boundary, both };

struct FusionConfig {
  PoolMode pool = PoolMode::avg;
  bool room = true;      // room branch receives its gated residual
  bool boundary = true;  // boundary branch receives its gated residual
};

inline FusionConfig ffa_disable(FusionConfig cfg, FusionBranch branch) {
  if (branch != FusionBranch::boundary) cfg.room = false;
  if (branch != FusionBranch::room) cfg.boundary = false;
  return cfg;
}

template <typename T>
struct FusionOutput {
  Var<T> room;
  Var<T> boundary;
  Var<T> gate;  // [2d], values in (0, 1)
};

/// f1, f2: [d,h,w]; gate_weight: [2d,2d]; gate_bias: [2d].
template <typename T>
FusionOutput<T> ffa_module(Var<T> f1, Var<T> f2, Var<T> gate_weight, Var<T> gate_bias, const FusionConfig& cfg) {
  ops::detail::require(f1.shape().size() == 3 && f1.shape() == f2.shape(), "ffa_module",
                       "branch shapes differ " + shape_str(f1.shape()) + " vs " + shape_str(f2.shape()));
  const std::size_t d = f1.shape()[0];
  ops::detail::require(gate_weight.shape() == Shape{2 * d, 2 * d} && gate_bias.shape() == Shape{2 * d}, "ffa_module",
                       "gate parameters " + shape_str(gate_weight.shape()) + "/" + shape_str(gate_bias.shape()) +
                           " do not match 2d = " + std::to_string(2 * d));
  const Var<T> f = ops::concat_channels<T>({f1, f2});
  const Var<T> pooled = cfg.pool == PoolMode::avg ? ops::global_avg_pool(f) : ops::global_max_pool(f);
  const Var<T> z = ops::add(ops::matmul(gate_weight, ops::reshape(pooled, {2 * d, 1})), ops::reshape(gate_bias, {2 * d, 1}));
  const Var<T> gate = ops::sigmoid(ops::reshape(z, {2 * d}));
  const Var<T> gated = ops::mul_channel(f, gate);
  FusionOutput<T> out{f1, f2, gate};
  if (cfg.room) out.room = ops::add(f1, ops::slice_channels(gated, 0, d));
  if (cfg.boundary) out.boundary = ops::add(f2, ops::slice_channels(gated, d, 2 * d));
  return out;
}

}  // namespace ogaseg
