#pragma once

// Brute-force reference computations shared by the unit tests and the
// acceptance binary. Nothing here reuses the library's neighbourhood tables.

#include <cmath>
#include <cstdint>
#include <vector>

#include "ogaseg/attention.hpp"
#include "ogaseg/geometry.hpp"
#include "ogaseg/metrics.hpp"
#include "ogaseg/synth.hpp"

namespace ogaseg::oracle {

// Dense (hw x hw) attention matrix: row i holds softmax(-|p'_i - p'_j|^2) over
// every j sharing a row or column with i, zero elsewhere.
inline std::vector<double> dense_attention(const Tensor<double>& offsets, bool use_softmax = true) {
  const std::size_t h = offsets.dim(1), w = offsets.dim(2), hw = h * w;
  std::vector<double> m(hw * hw, 0.0);
  for (std::size_t i = 0; i < hw; ++i) {
    const double iy = static_cast<double>(i / w) + offsets[i], ix = static_cast<double>(i % w) + offsets[hw + i];
    double mx = -INFINITY;
    for (std::size_t j = 0; j < hw; ++j) {
      if (i / w != j / w && i % w != j % w) continue;
      const double dy = iy - (static_cast<double>(j / w) + offsets[j]);
      const double dx = ix - (static_cast<double>(j % w) + offsets[hw + j]);
      m[i * hw + j] = -(dy * dy + dx * dx);
      mx = std::max(mx, m[i * hw + j]);
    }
    if (!use_softmax) continue;
    double z = 0;
    for (std::size_t j = 0; j < hw; ++j) {
      if (i / w != j / w && i % w != j % w) continue;
      z += m[i * hw + j] = std::exp(m[i * hw + j] - mx);
    }
    for (std::size_t j = 0; j < hw; ++j) m[i * hw + j] /= z;
  }
  return m;
}

// out[c] = M f[c] for every channel.
inline Tensor<double> dense_apply(const std::vector<double>& m, const Tensor<double>& f) {
  const std::size_t d = f.dim(0), hw = f.dim(1) * f.dim(2);
  Tensor<double> out(f.shape());
  for (std::size_t c = 0; c < d; ++c)
    for (std::size_t i = 0; i < hw; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < hw; ++j) s += m[i * hw + j] * f[c * hw + j];
      out[c * hw + i] = s;
    }
  return out;
}

struct AttentionMass {
  double same = 0;
  double cross = 0;
};

// For room pixel i of `rooms`, attention mass on criss-cross pixels of the same
// room and of other rooms. `attn` is [h,w,h+w-1] in the library's layout.
inline AttentionMass attention_mass(const Tensor<double>& attn, const RoomInstanceMap& rooms, std::size_t y,
                                    std::size_t x) {
  const CrissCross cc{rooms.height(), rooms.width()};
  const std::size_t i = y * cc.width + x;
  const auto me = rooms.ids().data[i];
  AttentionMass m;
  for (std::size_t k = 0; k < cc.count(); ++k) {
    const auto id = rooms.ids().data[cc.neighbor_index(y, x, k)];
    const double a = attn[i * cc.count() + k];
    if (id == me) m.same += a;
    else if (id) m.cross += a;
  }
  return m;
}

// Feature-resolution ground-truth offsets of a generated sample.
inline RoomInstanceMap feature_instances(const FloorPlanSample& s, std::size_t stride = 8) {
  return downsample_instances(s.instances.ids(), stride);
}

}  // namespace ogaseg::oracle
