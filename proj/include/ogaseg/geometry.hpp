#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ogaseg/errors.hpp"
#include "ogaseg/tensor.hpp"

namespace ogaseg {

/// Row-major 2-D raster.
template <typename V>
struct Grid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<V> data;

  Grid() = default;
  Grid(std::size_t h, std::size_t w, V fill = V{}) : height(h), width(w), data(h * w, fill) {}

  V& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
  const V& at(std::size_t y, std::size_t x) const { return data[y * width + x]; }
  std::size_t size() const { return data.size(); }

  friend bool operator==(const Grid&, const Grid&) = default;
};

using LabelMap = Grid<std::uint8_t>;

struct Point {
  double y = 0;
  double x = 0;
  friend bool operator==(const Point&, const Point&) = default;
};

/// Per-pixel room instance ids (0 = not a room) and the centroid of each id.
/// Ids are 1..count() with no gaps; centroids()[k-1] belongs to id k.
class RoomInstanceMap {
 public:
  RoomInstanceMap() = default;

  /// Computes centroids as the mean pixel coordinate of each id. Throws when
  /// an id in 1..max has no pixels.
  static RoomInstanceMap from_ids(Grid<std::uint16_t> ids) {
    RoomInstanceMap m;
    std::uint16_t max_id = 0;
    for (auto v : ids.data) max_id = std::max(max_id, v);
    std::vector<double> sy(max_id, 0), sx(max_id, 0);
    std::vector<std::size_t> n(max_id, 0);
    for (std::size_t y = 0; y < ids.height; ++y) {
      for (std::size_t x = 0; x < ids.width; ++x) {
        const auto id = ids.at(y, x);
        if (!id) continue;
        sy[id - 1] += static_cast<double>(y);
        sx[id - 1] += static_cast<double>(x);
        ++n[id - 1];
      }
    }
    m.centroids_.resize(max_id);
    for (std::size_t k = 0; k < max_id; ++k) {
      if (n[k] == 0) throw std::invalid_argument("room instance " + std::to_string(k + 1) + " has no pixels");
      m.centroids_[k] = {sy[k] / static_cast<double>(n[k]), sx[k] / static_cast<double>(n[k])};
    }
    m.ids_ = std::move(ids);
    return m;
  }

  const Grid<std::uint16_t>& ids() const { return ids_; }
  const std::vector<Point>& centroids() const { return centroids_; }
  std::size_t count() const { return centroids_.size(); }
  std::size_t height() const { return ids_.height; }
  std::size_t width() const { return ids_.width; }
  std::uint16_t id_at(std::size_t y, std::size_t x) const { return ids_.at(y, x); }

  /// True iff every id forms a single 4-connected component.
  bool connected() const {
    std::vector<std::uint8_t> seen(ids_.size(), 0);
    std::vector<std::uint8_t> id_done(count() + 1, 0);
    std::vector<std::size_t> stack;
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      const auto id = ids_.data[i];
      if (!id || seen[i]) continue;
      if (id_done[id]) return false;
      id_done[id] = 1;
      stack.push_back(i);
      seen[i] = 1;
      while (!stack.empty()) {
        const std::size_t p = stack.back();
        stack.pop_back();
        const std::size_t y = p / ids_.width, x = p % ids_.width;
        auto visit = [&](std::size_t q) {
          if (!seen[q] && ids_.data[q] == id) {
            seen[q] = 1;
            stack.push_back(q);
          }
        };
        if (y > 0) visit(p - ids_.width);
        if (y + 1 < ids_.height) visit(p + ids_.width);
        if (x > 0) visit(p - 1);
        if (x + 1 < ids_.width) visit(p + 1);
      }
    }
    return true;
  }

  friend bool operator==(const RoomInstanceMap&, const RoomInstanceMap&) = default;

 private:
  Grid<std::uint16_t> ids_;
  std::vector<Point> centroids_;
};

/// Plurality id over each factor x factor block (ties to the smaller id),
/// then ids re-numbered densely in increasing order of their original value.
inline RoomInstanceMap downsample_instances(const Grid<std::uint16_t>& full, std::size_t factor) {
  if (factor == 0 || full.height % factor || full.width % factor) {
    throw ShapeError("downsample_instances: " + std::to_string(full.height) + "x" + std::to_string(full.width) +
                     " not divisible by " + std::to_string(factor));
  }
  Grid<std::uint16_t> small(full.height / factor, full.width / factor, 0);
  std::map<std::uint16_t, std::size_t> counts;
  for (std::size_t by = 0; by < small.height; ++by) {
    for (std::size_t bx = 0; bx < small.width; ++bx) {
      counts.clear();
      for (std::size_t y = by * factor; y < (by + 1) * factor; ++y)
        for (std::size_t x = bx * factor; x < (bx + 1) * factor; ++x) ++counts[full.at(y, x)];
      std::uint16_t best = 0;
      std::size_t best_n = 0;
      for (const auto& [id, n] : counts) {
        if (n > best_n) {
          best = id;
          best_n = n;
        }
      }
      small.at(by, bx) = best;
    }
  }
  std::map<std::uint16_t, std::uint16_t> remap;
  for (auto v : small.data)
    if (v) remap[v] = 0;
  std::uint16_t next = 1;
  for (auto& [from, to] : remap) to = next++;
  for (auto& v : small.data)
    if (v) v = remap[v];
  return RoomInstanceMap::from_ids(std::move(small));
}

/// Per-pixel (dy, dx) toward the owning room's centroid; invalid pixels are
/// not part of any room and carry (0, 0).
struct OffsetField {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> dy, dx;
  std::vector<std::uint8_t> valid;

  OffsetField() = default;
  OffsetField(std::size_t h, std::size_t w) : height(h), width(w), dy(h * w, 0), dx(h * w, 0), valid(h * w, 0) {}

  std::size_t size() const { return height * width; }

  /// [2,h,w] tensor: channel 0 is dy, channel 1 is dx.
  template <typename T>
  Tensor<T> as_tensor() const {
    Tensor<T> t({2, height, width});
    for (std::size_t i = 0; i < size(); ++i) {
      t[i] = static_cast<T>(dy[i]);
      t[size() + i] = static_cast<T>(dx[i]);
    }
    return t;
  }

  /// Predicted offsets from a [2,h,w] tensor; every pixel is valid.
  template <typename T>
  static OffsetField from_tensor(const Tensor<T>& t) {
    if (t.rank() != 3 || t.dim(0) != 2) throw ShapeError("offset tensor must be [2,h,w], got " + shape_str(t.shape()));
    OffsetField f(t.dim(1), t.dim(2));
    for (std::size_t i = 0; i < f.size(); ++i) {
      f.dy[i] = static_cast<double>(t[i]);
      f.dx[i] = static_cast<double>(t[f.size() + i]);
    }
    std::fill(f.valid.begin(), f.valid.end(), std::uint8_t{1});
    return f;
  }
};

inline OffsetField offset_ground_truth(const RoomInstanceMap& instances) {
  OffsetField f(instances.height(), instances.width());
  for (std::size_t y = 0; y < f.height; ++y) {
    for (std::size_t x = 0; x < f.width; ++x) {
      const auto id = instances.id_at(y, x);
      if (!id) continue;
      if (id > instances.count()) throw std::invalid_argument("instance id " + std::to_string(id) + " has no centroid");
      const Point c = instances.centroids()[id - 1];
      const std::size_t i = y * f.width + x;
      f.dy[i] = c.y - static_cast<double>(y);
      f.dx[i] = c.x - static_cast<double>(x);
      f.valid[i] = 1;
    }
  }
  return f;
}

/// p' = p + o_p for every pixel, row-major.
inline std::vector<Point> shifted_positions(const OffsetField& offsets) {
  std::vector<Point> out(offsets.size());
  for (std::size_t y = 0; y < offsets.height; ++y) {
    for (std::size_t x = 0; x < offsets.width; ++x) {
      const std::size_t i = y * offsets.width + x;
      out[i] = {static_cast<double>(y) + offsets.dy[i], static_cast<double>(x) + offsets.dx[i]};
    }
  }
  return out;
}

/// Squared Euclidean distance between two shifted positions.
inline double pairwise_correlation(Point a, Point b) {
  const double dy = a.y - b.y, dx = a.x - b.x;
  return dy * dy + dx * dx;
}

}  // namespace ogaseg
