#pragma once

// Differentiable primitive catalog. Feature maps are [C,H,W]; there is no
// batch axis, batches are handled by running one tape per sample.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ogaseg/tape.hpp"

namespace ogaseg::ops {

namespace detail {

template <typename T>
Tape<T>& tape_of(std::string_view op, std::initializer_list<Var<T>> vs) {
  Tape<T>* t = nullptr;
  for (const auto& v : vs) {
    if (v.tape == nullptr) throw std::invalid_argument(std::string(op) + ": detached operand");
    if (t && v.tape != t) {
      throw std::invalid_argument(std::string(op) + ": operands on different tapes");
    }
    t = v.tape;
  }
  return *t;
}

inline void require(bool ok, std::string_view op, const std::string& what) {
  if (!ok) throw ShapeError(std::string(op) + ": " + what);
}

inline void require_rank(std::string_view op, const Shape& s, std::size_t r) {
  require(s.size() == r, op,
          "expected rank " + std::to_string(r) + ", got shape " + shape_str(s));
}

inline void require_same(std::string_view op, const Shape& a, const Shape& b) {
  require(a == b, op, "shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// 8 independent accumulators: lets the compiler vectorize without
// reassociation flags while keeping a fixed summation order.
template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (int k = 0; k < 8; ++k) acc[k] += a[i + k] * b[i + k];
  }
  T s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace detail

template <typename T>
Var<T> detach(Var<T> x) {
  return x.tape->constant(x.value());
}

template <typename T>
Var<T> relu(Var<T> x) {
  Tape<T>& tape = detail::tape_of("relu", {x});
  const auto& in = x.value();
  Tensor<T> out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) {
    out[i] = in[i] > T{0} ? in[i] : T{0};
    if (tape.record_branches) tape.note_branch(in[i] > T{0} ? 1u : (in[i] == T{0} ? 2u : 0u));
  }
  return tape.record("relu", std::move(out), {x}, [x](Tape<T>& t, std::size_t self) {
    const auto& g = t.out_grad(self);
    const auto& in = t.value(x.id);
    if (auto* gx = t.grad_buffer(x.id)) {
      // subgradient 0 at the kink
      for (std::size_t i = 0; i < in.size(); ++i) {
        if (in[i] > T{0}) (*gx)[i] += g[i];
      }
    }
  });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  Tape<T>& tape = detail::tape_of("sigmoid", {x});
  const auto& in = x.value();
  Tensor<T> out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = T{1} / (T{1} + std::exp(-in[i]));
  return tape.record("sigmoid", std::move(out), {x}, [x](Tape<T>& t, std::size_t self) {
    const auto& g = t.out_grad(self);
    const auto& y = t.value(self);
    if (auto* gx = t.grad_buffer(x.id)) {
      for (std::size_t i = 0; i < y.size(); ++i) (*gx)[i] += g[i] * y[i] * (T{1} - y[i]);
    }
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::tape_of("add", {a, b});
  detail::require_same("add", a.shape(), b.shape());
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return tape.record("add", std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const auto& g = t.out_grad(self);
    for (auto id : {a.id, b.id}) {
      if (auto* gx = t.grad_buffer(id)) detail::axpy(T{1}, g.data().data(), gx->data().data(), g.size());
    }
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::tape_of("sub", {a, b});
  detail::require_same("sub", a.shape(), b.shape());
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return tape.record("sub", std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const auto& g = t.out_grad(self);
    if (auto* ga = t.grad_buffer(a.id)) detail::axpy(T{1}, g.data().data(), ga->data().data(), g.size());
    if (auto* gb = t.grad_buffer(b.id)) detail::axpy(T{-1}, g.data().data(), gb->data().data(), g.size());
  });
}

/// Elementwise product of equal shapes.
template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::tape_of("mul", {a, b});
  detail::require_same("mul", a.shape(), b.shape());
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return tape.record("mul", std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const auto& g = t.out_grad(self);
    const auto& av = t.value(a.id);
    const auto& bv = t.value(b.id);
    if (auto* ga = t.grad_buffer(a.id)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
    }
    if (auto* gb = t.grad_buffer(b.id)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> x, T s) {
  Tape<T>& tape = detail::tape_of("scale", {x});
  Tensor<T> out = x.value();
  for (auto& v : out.vec()) v *= s;
  return tape.record("scale", std::move(out), {x}, [x, s](Tape<T>& t, std::size_t self) {
    const auto& g = t.out_grad(self);
    if (auto* gx = t.grad_buffer(x.id)) detail::axpy(s, g.data().data(), gx->data().data(), g.size());
  });
}

template <typename T>
Var<T> sum(Var<T> x) {
  Tape<T>& tape = detail::tape_of("sum", {x});
  T s{0};
  for (T v : x.value().data()) s += v;
  return tape.record("sum", Tensor<T>::scalar(s), {x}, [x](Tape<T>& t, std::size_t self) {
    const T g = t.out_grad(self)[0];
    if (auto* gx = t.grad_buffer(x.id)) {
      for (auto& v : gx->vec()) v += g;
    }
  });
}

template <typename T>
Var<T> mean(Var<T> x) {
  return scale(sum(x), T{1} / static_cast<T>(x.value().size()));
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tape<T>& tape = detail::tape_of("reshape", {x});
  detail::require(shape_size(shape) == x.value().size(), "reshape",
                  "cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  Tensor<T> out(std::move(shape), x.value().vec());
  return tape.record("reshape", std::move(out), {x}, [x](Tape<T>& t, std::size_t self) {
    const auto& g = t.out_grad(self);
    if (auto* gx = t.grad_buffer(x.id)) detail::axpy(T{1}, g.data().data(), gx->data().data(), g.size());
  });
}

/// Concatenation along axis 0 (channels for [C,H,W]).
template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& xs) {
  detail::require(!xs.empty(), "concat_channels", "no operands");
  Tape<T>& tape = *xs.front().tape;
  Shape tail(xs.front().shape().begin() + 1, xs.front().shape().end());
  std::size_t channels = 0;
  for (const auto& x : xs) {
    if (x.tape != &tape) throw std::invalid_argument("concat_channels: operands on different tapes");
    Shape t(x.shape().begin() + 1, x.shape().end());
    detail::require(!x.shape().empty() && t == tail, "concat_channels",
                    "trailing shape mismatch " + shape_str(x.shape()) + " vs " +
                        shape_str(xs.front().shape()));
    channels += x.shape()[0];
  }
  Shape shape{channels};
  shape.insert(shape.end(), tail.begin(), tail.end());
  Tensor<T> out(shape);
  std::size_t off = 0;
  for (const auto& x : xs) {
    std::copy(x.value().vec().begin(), x.value().vec().end(), out.vec().begin() + off);
    off += x.value().size();
  }
  return tape.record("concat_channels", std::move(out), xs, [xs](Tape<T>& t, std::size_t self) {
    const auto& g = t.out_grad(self);
    std::size_t off = 0;
    for (const auto& x : xs) {
      const std::size_t n = t.value(x.id).size();
      if (auto* gx = t.grad_buffer(x.id)) detail::axpy(T{1}, g.data().data() + off, gx->data().data(), n);
      off += n;
    }
  });
}

/// Channels [begin, end) along axis 0.
template <typename T>
Var<T> slice_channels(Var<T> x, std::size_t begin, std::size_t end) {
  Tape<T>& tape = detail::tape_of("slice_channels", {x});
  const Shape& s = x.shape();
  detail::require(!s.empty() && begin < end && end <= s[0], "slice_channels",
                  "range [" + std::to_string(begin) + "," + std::to_string(end) +
                      ") outside shape " + shape_str(s));
  const std::size_t plane = x.value().size() / s[0];
  Shape shape = s;
  shape[0] = end - begin;
  Tensor<T> out(shape);
  std::copy_n(x.value().vec().begin() + begin * plane, (end - begin) * plane, out.vec().begin());
  return tape.record("slice_channels", std::move(out), {x},
                     [x, begin, plane](Tape<T>& t, std::size_t self) {
                       const auto& g = t.out_grad(self);
                       if (auto* gx = t.grad_buffer(x.id)) {
                         detail::axpy(T{1}, g.data().data(), gx->data().data() + begin * plane, g.size());
                       }
                     });
}

/// [m,k] x [k,n] -> [m,n]
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::tape_of("matmul", {a, b});
  detail::require_rank("matmul", a.shape(), 2);
  detail::require_rank("matmul", b.shape(), 2);
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  detail::require(b.shape()[0] == k, "matmul",
                  "inner extents differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor<T> out({m, n});
  const T* av = a.value().data().data();
  const T* bv = b.value().data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) detail::axpy(av[i * k + p], bv + p * n, out.data().data() + i * n, n);
  }
  return tape.record("matmul", std::move(out), {a, b}, [a, b, m, k, n](Tape<T>& t, std::size_t self) {
    const T* g = t.out_grad(self).data().data();
    const T* av = t.value(a.id).data().data();
    const T* bv = t.value(b.id).data().data();
    if (auto* ga = t.grad_buffer(a.id)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) (*ga)[i * k + p] += detail::dot(g + i * n, bv + p * n, n);
    }
    if (auto* gb = t.grad_buffer(b.id)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) detail::axpy(av[i * k + p], g + i * n, gb->data().data() + p * n, n);
    }
  });
}

/// Softmax along `axis`, optionally scaled by 1/temperature.
template <typename T>
Var<T> softmax(Var<T> x, std::size_t axis, T temperature = T{1}) {
  Tape<T>& tape = detail::tape_of("softmax", {x});
  const Shape& s = x.shape();
  detail::require(axis < s.size(), "softmax", "axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  detail::require(temperature > T{0}, "softmax", "temperature must be positive");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  const auto& in = x.value();
  Tensor<T> out(s);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t q = 0; q < inner; ++q) {
      const std::size_t base = o * n * inner + q;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, in[base + j * inner] / temperature);
      T z{0};
      for (std::size_t j = 0; j < n; ++j) {
        const T e = std::exp(in[base + j * inner] / temperature - mx);
        out[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= z;
    }
  }
  return tape.record("softmax", std::move(out), {x},
                     [x, outer, inner, n, temperature](Tape<T>& t, std::size_t self) {
                       const auto& g = t.out_grad(self);
                       const auto& y = t.value(self);
                       auto* gx = t.grad_buffer(x.id);
                       if (!gx) return;
                       for (std::size_t o = 0; o < outer; ++o) {
                         for (std::size_t q = 0; q < inner; ++q) {
                           const std::size_t base = o * n * inner + q;
                           T d{0};
                           for (std::size_t j = 0; j < n; ++j) d += g[base + j * inner] * y[base + j * inner];
                           for (std::size_t j = 0; j < n; ++j) {
                             const std::size_t i = base + j * inner;
                             (*gx)[i] += y[i] * (g[i] - d) / temperature;
                           }
                         }
                       }
                     });
}

/// [C,H,W] -> [C]
template <typename T>
Var<T> global_avg_pool(Var<T> x) {
  Tape<T>& tape = detail::tape_of("global_avg_pool", {x});
  detail::require_rank("global_avg_pool", x.shape(), 3);
  const std::size_t c = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
  Tensor<T> out({c});
  const T* in = x.value().data().data();
  for (std::size_t k = 0; k < c; ++k) {
    T s{0};
    for (std::size_t i = 0; i < hw; ++i) s += in[k * hw + i];
    out[k] = s / static_cast<T>(hw);
  }
  return tape.record("global_avg_pool", std::move(out), {x}, [x, c, hw](Tape<T>& t, std::size_t self) {
    const auto& g = t.out_grad(self);
    if (auto* gx = t.grad_buffer(x.id)) {
      for (std::size_t k = 0; k < c; ++k) {
        const T v = g[k] / static_cast<T>(hw);
        for (std::size_t i = 0; i < hw; ++i) (*gx)[k * hw + i] += v;
      }
    }
  });
}

/// [C,H,W] -> [C]; gradient routed to the first maximal element.
template <typename T>
Var<T> global_max_pool(Var<T> x) {
  Tape<T>& tape = detail::tape_of("global_max_pool", {x});
  detail::require_rank("global_max_pool", x.shape(), 3);
  const std::size_t c = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
  Tensor<T> out({c});
  std::vector<std::size_t> argmax(c);
  const T* in = x.value().data().data();
  for (std::size_t k = 0; k < c; ++k) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < hw; ++i) {
      if (in[k * hw + i] > in[k * hw + best]) best = i;
    }
    argmax[k] = best;
    out[k] = in[k * hw + best];
    tape.note_branch(static_cast<std::uint32_t>(best));
  }
  return tape.record("global_max_pool", std::move(out), {x}, [x, c, hw, argmax](Tape<T>& t, std::size_t self) {
    const auto& g = t.out_grad(self);
    if (auto* gx = t.grad_buffer(x.id)) {
      for (std::size_t k = 0; k < c; ++k) (*gx)[k * hw + argmax[k]] += g[k];
    }
  });
}

/// x[C,H,W] scaled per channel by w[C].
template <typename T>
Var<T> mul_channel(Var<T> x, Var<T> w) {
  Tape<T>& tape = detail::tape_of("mul_channel", {x, w});
  detail::require_rank("mul_channel", x.shape(), 3);
  detail::require(w.shape() == Shape{x.shape()[0]}, "mul_channel",
                  "gate shape " + shape_str(w.shape()) + " does not match channels of " + shape_str(x.shape()));
  const std::size_t c = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
  Tensor<T> out = x.value();
  const auto& wv = w.value();
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < hw; ++i) out[k * hw + i] *= wv[k];
  return tape.record("mul_channel", std::move(out), {x, w}, [x, w, c, hw](Tape<T>& t, std::size_t self) {
    const T* g = t.out_grad(self).data().data();
    const auto& xv = t.value(x.id);
    const auto& wv = t.value(w.id);
    if (auto* gx = t.grad_buffer(x.id)) {
      for (std::size_t k = 0; k < c; ++k) detail::axpy(wv[k], g + k * hw, gx->data().data() + k * hw, hw);
    }
    if (auto* gw = t.grad_buffer(w.id)) {
      for (std::size_t k = 0; k < c; ++k) (*gw)[k] += detail::dot(g + k * hw, xv.data().data() + k * hw, hw);
    }
  });
}

namespace detail {

struct Interp {
  std::vector<std::size_t> i0, i1;
  std::vector<double> frac;
};

// Half-pixel-centered sampling (align_corners = false), clamped at the border.
inline Interp bilinear_axis(std::size_t in, std::size_t factor) {
  Interp r;
  const std::size_t out = in * factor;
  r.i0.resize(out);
  r.i1.resize(out);
  r.frac.resize(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
    if (src < 0) src = 0;
    auto lo = static_cast<std::size_t>(src);
    if (lo > in - 1) lo = in - 1;
    r.i0[o] = lo;
    r.i1[o] = std::min(lo + 1, in - 1);
    r.frac[o] = src - static_cast<double>(lo);
  }
  return r;
}

}  // namespace detail

/// [C,H,W] -> [C,fH,fW], bilinear.
template <typename T>
Var<T> upsample_bilinear(Var<T> x, std::size_t factor) {
  Tape<T>& tape = detail::tape_of("upsample_bilinear", {x});
  detail::require_rank("upsample_bilinear", x.shape(), 3);
  detail::require(factor >= 1, "upsample_bilinear", "factor must be >= 1");
  const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const std::size_t oh = h * factor, ow = w * factor;
  auto ry = std::make_shared<detail::Interp>(detail::bilinear_axis(h, factor));
  auto rx = std::make_shared<detail::Interp>(detail::bilinear_axis(w, factor));
  Tensor<T> out({c, oh, ow});
  const auto& in = x.value();
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t y = 0; y < oh; ++y) {
      const T fy = static_cast<T>(ry->frac[y]);
      const std::size_t y0 = ry->i0[y], y1 = ry->i1[y];
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const T fx = static_cast<T>(rx->frac[xx]);
        const std::size_t x0 = rx->i0[xx], x1 = rx->i1[xx];
        const T top = (T{1} - fx) * in.at(k, y0, x0) + fx * in.at(k, y0, x1);
        const T bot = (T{1} - fx) * in.at(k, y1, x0) + fx * in.at(k, y1, x1);
        out.at(k, y, xx) = (T{1} - fy) * top + fy * bot;
      }
    }
  }
  return tape.record("upsample_bilinear", std::move(out), {x},
                     [x, c, oh, ow, ry, rx](Tape<T>& t, std::size_t self) {
                       const auto& g = t.out_grad(self);
                       auto* gx = t.grad_buffer(x.id);
                       if (!gx) return;
                       for (std::size_t k = 0; k < c; ++k) {
                         for (std::size_t y = 0; y < oh; ++y) {
                           const T fy = static_cast<T>(ry->frac[y]);
                           const std::size_t y0 = ry->i0[y], y1 = ry->i1[y];
                           for (std::size_t xx = 0; xx < ow; ++xx) {
                             const T fx = static_cast<T>(rx->frac[xx]);
                             const std::size_t x0 = rx->i0[xx], x1 = rx->i1[xx];
                             const T v = g.at(k, y, xx);
                             gx->at(k, y0, x0) += v * (T{1} - fy) * (T{1} - fx);
                             gx->at(k, y0, x1) += v * (T{1} - fy) * fx;
                             gx->at(k, y1, x0) += v * fy * (T{1} - fx);
                             gx->at(k, y1, x1) += v * fy * fx;
                           }
                         }
                       }
                     });
}

struct Conv2dGeometry {
  std::size_t cin, h, w, cout, k, stride, pad, oh, ow;
};

namespace detail {

template <typename T>
void im2col(const T* x, const Conv2dGeometry& g, T* col) {
  const std::size_t p = g.oh * g.ow;
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        T* row = col + ((c * g.k + ky) * g.k + kx) * p;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.h) && ix < static_cast<long>(g.w);
            row[oy * g.ow + ox] = inside ? x[(c * g.h + iy) * g.w + ix] : T{0};
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, const Conv2dGeometry& g, T* x) {
  const std::size_t p = g.oh * g.ow;
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const T* row = col + ((c * g.k + ky) * g.k + kx) * p;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            x[(c * g.h + iy) * g.w + ix] += row[oy * g.ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// x[Cin,H,W] * w[Cout,Cin,K,K] + b[Cout] -> [Cout,Ho,Wo], zero padding.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, std::size_t stride = 1, std::size_t pad = 0) {
  Tape<T>& tape = detail::tape_of("conv2d", {x, weight, bias});
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  detail::require_rank("conv2d", xs, 3);
  detail::require_rank("conv2d", ws, 4);
  detail::require(ws[1] == xs[0] && ws[2] == ws[3], "conv2d",
                  "kernel " + shape_str(ws) + " incompatible with input " + shape_str(xs));
  detail::require(bias.shape() == Shape{ws[0]}, "conv2d",
                  "bias " + shape_str(bias.shape()) + " does not match kernel " + shape_str(ws));
  detail::require(stride >= 1 && xs[1] + 2 * pad >= ws[2] && xs[2] + 2 * pad >= ws[3], "conv2d",
                  "kernel " + shape_str(ws) + " larger than padded input " + shape_str(xs));
  Conv2dGeometry g{xs[0], xs[1], xs[2], ws[0], ws[2], stride, pad, 0, 0};
  g.oh = (g.h + 2 * pad - g.k) / stride + 1;
  g.ow = (g.w + 2 * pad - g.k) / stride + 1;
  const std::size_t p = g.oh * g.ow;
  const std::size_t kk = g.cin * g.k * g.k;
  auto col = std::make_shared<std::vector<T>>(kk * p);
  detail::im2col(x.value().data().data(), g, col->data());
  Tensor<T> out({g.cout, g.oh, g.ow});
  const T* wv = weight.value().data().data();
  const T* bv = bias.value().data().data();
  for (std::size_t co = 0; co < g.cout; ++co) {
    T* orow = out.data().data() + co * p;
    std::fill(orow, orow + p, bv[co]);
    for (std::size_t q = 0; q < kk; ++q) detail::axpy(wv[co * kk + q], col->data() + q * p, orow, p);
  }
  return tape.record("conv2d", std::move(out), {x, weight, bias},
                     [x, weight, bias, g, col, p, kk](Tape<T>& t, std::size_t self) {
                       const T* gout = t.out_grad(self).data().data();
                       if (auto* gb = t.grad_buffer(bias.id)) {
                         for (std::size_t co = 0; co < g.cout; ++co) {
                           T s{0};
                           for (std::size_t i = 0; i < p; ++i) s += gout[co * p + i];
                           (*gb)[co] += s;
                         }
                       }
                       if (auto* gw = t.grad_buffer(weight.id)) {
                         for (std::size_t co = 0; co < g.cout; ++co)
                           for (std::size_t q = 0; q < kk; ++q)
                             (*gw)[co * kk + q] += detail::dot(gout + co * p, col->data() + q * p, p);
                       }
                       if (auto* gx = t.grad_buffer(x.id)) {
                         const T* wv = t.value(weight.id).data().data();
                         std::vector<T> dcol(kk * p, T{0});
                         for (std::size_t co = 0; co < g.cout; ++co)
                           for (std::size_t q = 0; q < kk; ++q)
                             detail::axpy(wv[co * kk + q], gout + co * p, dcol.data() + q * p, p);
                         detail::col2im(dcol.data(), g, gx->data().data());
                       }
                     });
}

/// Mean over valid positions of sum_c |pred[c,...] - target[c,...]|.
/// `valid` is per spatial position (size = numel / channels); empty means all.
/// Returns 0 when nothing is valid.
template <typename T>
Var<T> masked_l1_mean(Var<T> pred, const Tensor<T>& target, std::span<const std::uint8_t> valid) {
  Tape<T>& tape = detail::tape_of("masked_l1_mean", {pred});
  detail::require_same("masked_l1_mean", pred.shape(), target.shape());
  detail::require(!pred.shape().empty(), "masked_l1_mean", "scalar prediction");
  const std::size_t c = pred.shape()[0];
  const std::size_t plane = pred.value().size() / c;
  detail::require(valid.empty() || valid.size() == plane, "masked_l1_mean",
                  "mask of " + std::to_string(valid.size()) + " entries for " + std::to_string(plane) + " positions");
  std::vector<std::uint8_t> mask(valid.begin(), valid.end());
  if (mask.empty()) mask.assign(plane, 1);
  std::size_t count = 0;
  for (auto m : mask) count += m ? 1 : 0;
  const auto& pv = pred.value();
  T s{0};
  std::vector<T> sign(pv.size(), T{0});
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t i = 0; i < plane; ++i) {
      if (!mask[i]) continue;
      const T d = pv[k * plane + i] - target[k * plane + i];
      s += std::abs(d);
      sign[k * plane + i] = d > T{0} ? T{1} : (d < T{0} ? T{-1} : T{0});
      tape.note_branch(d > T{0} ? 1u : (d == T{0} ? 2u : 0u));
    }
  }
  const T inv = count ? T{1} / static_cast<T>(count) : T{0};
  return tape.record("masked_l1_mean", Tensor<T>::scalar(s * inv), {pred},
                     [pred, sign = std::move(sign), inv](Tape<T>& t, std::size_t self) {
                       const T g = t.out_grad(self)[0] * inv;
                       if (auto* gp = t.grad_buffer(pred.id)) detail::axpy(g, sign.data(), gp->data().data(), sign.size());
                     });
}

/// Mean over unmasked pixels of -w[y] * log softmax(logits)[y].
/// logits [C,H,W]; labels/mask have H*W entries; empty mask means all pixels.
template <typename T>
Var<T> weighted_cross_entropy(Var<T> logits, std::span<const std::uint8_t> labels,
                              const std::vector<T>& weights, std::span<const std::uint8_t> mask = {}) {
  Tape<T>& tape = detail::tape_of("weighted_cross_entropy", {logits});
  detail::require_rank("weighted_cross_entropy", logits.shape(), 3);
  const std::size_t c = logits.shape()[0];
  const std::size_t hw = logits.shape()[1] * logits.shape()[2];
  detail::require(labels.size() == hw, "weighted_cross_entropy",
                  std::to_string(labels.size()) + " labels for logits " + shape_str(logits.shape()));
  detail::require(weights.size() == c, "weighted_cross_entropy",
                  std::to_string(weights.size()) + " class weights for " + std::to_string(c) + " classes");
  detail::require(mask.empty() || mask.size() == hw, "weighted_cross_entropy", "mask size mismatch");
  const auto& lv = logits.value();
  auto probs = std::make_shared<std::vector<T>>(c * hw);
  std::vector<std::uint8_t> lab(labels.begin(), labels.end());
  std::vector<std::uint8_t> use(hw, 1);
  std::size_t count = 0;
  T total{0};
  for (std::size_t i = 0; i < hw; ++i) {
    if (!mask.empty() && !mask[i]) {
      use[i] = 0;
      continue;
    }
    if (lab[i] >= c) {
      throw std::out_of_range("weighted_cross_entropy: label " + std::to_string(lab[i]) + " at pixel " +
                              std::to_string(i) + " outside [0," + std::to_string(c) + ")");
    }
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t k = 0; k < c; ++k) mx = std::max(mx, lv[k * hw + i]);
    T z{0};
    for (std::size_t k = 0; k < c; ++k) z += std::exp(lv[k * hw + i] - mx);
    const T logz = std::log(z) + mx;
    for (std::size_t k = 0; k < c; ++k) (*probs)[k * hw + i] = std::exp(lv[k * hw + i] - logz);
    total += -weights[lab[i]] * (lv[lab[i] * hw + i] - logz);
    ++count;
  }
  const T inv = count ? T{1} / static_cast<T>(count) : T{0};
  return tape.record("weighted_cross_entropy", Tensor<T>::scalar(total * inv), {logits},
                     [logits, probs, lab = std::move(lab), use = std::move(use), weights, inv, c, hw](
                         Tape<T>& t, std::size_t self) {
                       const T g = t.out_grad(self)[0] * inv;
                       auto* gl = t.grad_buffer(logits.id);
                       if (!gl) return;
                       for (std::size_t i = 0; i < hw; ++i) {
                         if (!use[i]) continue;
                         const T wy = weights[lab[i]] * g;
                         for (std::size_t k = 0; k < c; ++k) {
                           const T ind = k == lab[i] ? T{1} : T{0};
                           (*gl)[k * hw + i] += wy * ((*probs)[k * hw + i] - ind);
                         }
                       }
                     });
}

}  // namespace ogaseg::ops
