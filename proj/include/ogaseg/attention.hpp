#pragma once

// Offset-guided criss-cross attention.
//
// Every pixel i = (y, x) of an h x w map attends to its criss-cross
// neighbourhood N(i): the full row y followed by column x without (y, x), so
// |N(i)| = h + w - 1 and neighbour k < w is (y, k). Raw affinity between i and
// j is the negated squared distance of their offset-shifted positions
// p' = p + o_p; softmax over N(i) turns it into attention weights, and the
// enhanced feature is the weighted sum of neighbour features. Two passes with
// the same attention map reach every pixel pair.

#include <cstdint>
#include <string>
#include <utility>

#include "ogaseg/geometry.hpp"
#include "ogaseg/ops.hpp"

namespace ogaseg {

enum class AffinityMode { offset_guided, absolute_distance };

struct AttentionConfig {
  bool enabled = true;  // false: identity bypass, output = concat(f, f)
  AffinityMode mode = AffinityMode::offset_guided;
  bool use_softmax = true;
  // false selects softmax(+distance); kept only to audit the sign choice.
  bool negate_distance = true;
  double temperature = 1.0;
};

struct CrissCross {
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t count() const { return height + width - 1; }

  /// (row, col) of neighbour k of pixel (y, x).
  std::pair<std::size_t, std::size_t> neighbor(std::size_t y, std::size_t x, std::size_t k) const {
    if (k < width) return {y, k};
    const std::size_t r = k - width;
    return {r < y ? r : r + 1, x};
  }

  std::size_t neighbor_index(std::size_t y, std::size_t x, std::size_t k) const {
    auto [ny, nx] = neighbor(y, x, k);
    return ny * width + nx;
  }
};

namespace attention {

/// offsets [2,h,w] -> raw scores [h,w,h+w-1]. In absolute_distance mode the
/// offsets are ignored and the result is a constant.
template <typename T>
Var<T> affinity_scores(Var<T> offsets, AffinityMode mode, bool negate = true) {
  Tape<T>& tape = ops::detail::tape_of("affinity_scores", {offsets});
  const Shape& s = offsets.shape();
  ops::detail::require(s.size() == 3 && s[0] == 2, "affinity_scores",
                       "offsets must be [2,h,w], got " + shape_str(s));
  const CrissCross cc{s[1], s[2]};
  const std::size_t hw = cc.height * cc.width, n = cc.count();
  const bool guided = mode == AffinityMode::offset_guided;
  const T sign = negate ? T{-1} : T{1};
  const auto& o = offsets.value();
  auto shifted = [&](std::size_t p, std::size_t axis) {
    const T coord = static_cast<T>(axis == 0 ? p / cc.width : p % cc.width);
    return guided ? coord + o[axis * hw + p] : coord;
  };
  Tensor<T> out({cc.height, cc.width, n});
  for (std::size_t y = 0; y < cc.height; ++y) {
    for (std::size_t x = 0; x < cc.width; ++x) {
      const std::size_t i = y * cc.width + x;
      const T iy = shifted(i, 0), ix = shifted(i, 1);
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t j = cc.neighbor_index(y, x, k);
        const T dy = iy - shifted(j, 0), dx = ix - shifted(j, 1);
        out[i * n + k] = sign * (dy * dy + dx * dx);
      }
    }
  }
  if (!guided) return tape.constant(std::move(out));
  return tape.record("affinity_scores", std::move(out), {offsets},
                     [offsets, cc, hw, n, sign](Tape<T>& t, std::size_t self) {
                       const auto& g = t.out_grad(self);
                       auto* go = t.grad_buffer(offsets.id);
                       if (!go) return;
                       const auto& o = t.value(offsets.id);
                       for (std::size_t y = 0; y < cc.height; ++y) {
                         for (std::size_t x = 0; x < cc.width; ++x) {
                           const std::size_t i = y * cc.width + x;
                           for (std::size_t k = 0; k < n; ++k) {
                             const std::size_t j = cc.neighbor_index(y, x, k);
                             const T dy = static_cast<T>(y) + o[i] - static_cast<T>(j / cc.width) - o[j];
                             const T dx = static_cast<T>(x) + o[hw + i] - static_cast<T>(j % cc.width) - o[hw + j];
                             const T gk = g[i * n + k] * sign * T{2};
                             (*go)[i] += gk * dy;
                             (*go)[j] -= gk * dy;
                             (*go)[hw + i] += gk * dx;
                             (*go)[hw + j] -= gk * dx;
                           }
                         }
                       }
                     });
}

/// Softmax over each pixel's neighbourhood, or the raw scores when disabled.
template <typename T>
Var<T> normalize(Var<T> scores, bool use_softmax, T temperature = T{1}) {
  if (!use_softmax) return scores;
  return ops::softmax(scores, 2, temperature);
}

/// out[c,i] = sum_k A[i,k] * f[c, N(i)_k]; f [d,h,w], A [h,w,h+w-1].
template <typename T>
Var<T> aggregate(Var<T> features, Var<T> attn) {
  Tape<T>& tape = ops::detail::tape_of("aggregate", {features, attn});
  const Shape& fs = features.shape();
  const Shape& as = attn.shape();
  ops::detail::require(fs.size() == 3 && as.size() == 3 && as[0] == fs[1] && as[1] == fs[2] &&
                           as[2] == fs[1] + fs[2] - 1,
                       "aggregate", "features " + shape_str(fs) + " incompatible with attention " + shape_str(as));
  const CrissCross cc{fs[1], fs[2]};
  const std::size_t d = fs[0], hw = cc.height * cc.width, n = cc.count();
  // neighbour table shared by forward and backward
  auto nb = std::make_shared<std::vector<std::size_t>>(hw * n);
  for (std::size_t y = 0; y < cc.height; ++y)
    for (std::size_t x = 0; x < cc.width; ++x)
      for (std::size_t k = 0; k < n; ++k) (*nb)[(y * cc.width + x) * n + k] = cc.neighbor_index(y, x, k);
  const auto& f = features.value();
  const auto& a = attn.value();
  Tensor<T> out({d, cc.height, cc.width});
  for (std::size_t c = 0; c < d; ++c) {
    const T* fc = f.data().data() + c * hw;
    for (std::size_t i = 0; i < hw; ++i) {
      T s{0};
      for (std::size_t k = 0; k < n; ++k) s += a[i * n + k] * fc[(*nb)[i * n + k]];
      out[c * hw + i] = s;
    }
  }
  return tape.record("aggregate", std::move(out), {features, attn},
                     [features, attn, nb, d, hw, n](Tape<T>& t, std::size_t self) {
                       const auto& g = t.out_grad(self);
                       const auto& f = t.value(features.id);
                       const auto& a = t.value(attn.id);
                       if (auto* gf = t.grad_buffer(features.id)) {
                         for (std::size_t c = 0; c < d; ++c)
                           for (std::size_t i = 0; i < hw; ++i) {
                             const T gi = g[c * hw + i];
                             for (std::size_t k = 0; k < n; ++k) (*gf)[c * hw + (*nb)[i * n + k]] += a[i * n + k] * gi;
                           }
                       }
                       if (auto* ga = t.grad_buffer(attn.id)) {
                         for (std::size_t c = 0; c < d; ++c)
                           for (std::size_t i = 0; i < hw; ++i) {
                             const T gi = g[c * hw + i];
                             for (std::size_t k = 0; k < n; ++k) (*ga)[i * n + k] += gi * f[c * hw + (*nb)[i * n + k]];
                           }
                       }
                     });
}

/// Attention map [h,w,h+w-1] for the given offsets and config.
template <typename T>
Var<T> attention_map(Var<T> offsets, const AttentionConfig& cfg) {
  return normalize(affinity_scores(offsets, cfg.mode, cfg.negate_distance), cfg.use_softmax,
                   static_cast<T>(cfg.temperature));
}

/// Two criss-cross passes sharing one attention map, then concat with the
/// input: [d,h,w] -> [2d,h,w].
template <typename T>
Var<T> oga_module(Var<T> features, Var<T> offsets, const AttentionConfig& cfg) {
  const Shape& fs = features.shape();
  ops::detail::require(fs.size() == 3 && offsets.shape() == Shape{2, fs[1], fs[2]}, "oga_module",
                       "features " + shape_str(fs) + " vs offsets " + shape_str(offsets.shape()));
  if (!cfg.enabled) return ops::concat_channels<T>({features, features});
  const Var<T> a = attention_map(offsets, cfg);
  const Var<T> once = aggregate(features, a);
  const Var<T> twice = aggregate(once, a);
  return ops::concat_channels<T>({twice, features});
}

/// Attention weights for an OffsetField, evaluated outside any training tape.
inline Tensor<double> attention_weights(const OffsetField& offsets, const AttentionConfig& cfg) {
  Tape<double> tape;
  auto o = tape.constant(offsets.as_tensor<double>());
  return attention_map(o, cfg).value();
}

}  // namespace attention
}  // namespace ogaseg
