#pragma once

// Procedural floor plans. The interior is split recursively by axis-aligned
// walls; each split wall carries exactly one door so every room stays
// reachable. With `align_to_stride` walls and doors are placed so that they
// cover a sample centre of the stride-8 feature grid, which keeps thin walls
// representable by logits upsampled from that grid.

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ogaseg/errors.hpp"
#include "ogaseg/geometry.hpp"
#include "ogaseg/palette.hpp"
#include "ogaseg/random.hpp"

namespace ogaseg {

struct FloorPlanSample {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> image;  // interleaved RGB8
  LabelMap room_labels;             // 0 = background, 1..6 room types
  LabelMap boundary_labels;         // 0 = none, 1 = wall, 2 = door & window
  RoomInstanceMap instances;        // full resolution

  friend bool operator==(const FloorPlanSample&, const FloorPlanSample&) = default;
};

struct GenerateOptions {
  std::size_t size = 64;
  std::size_t min_rooms = 2;
  std::size_t max_rooms = 4;
  bool align_to_stride = true;
  std::size_t min_room_extent = 16;
  double tint = 0.35;     // strength of the per-category interior tint
  int noise = 4;          // +- grey-level noise on interiors
};

namespace synth_detail {

struct Interval {
  long lo, hi;  // [lo, hi)
};

struct Region {
  long y0, y1, x0, x1;  // interior, half-open
  // door intervals lying on each side, measured along that side
  std::vector<Interval> top, bottom, left, right;
};

struct Wall {
  bool vertical;  // true: occupies columns [start, start + thickness)
  long start, thickness;
  long span_lo, span_hi;  // extent along the wall
  Interval door;
};

struct Split {
  std::size_t leaf;
  Wall wall;
};

inline bool clear_of(const std::vector<Interval>& doors, long start, long thickness) {
  for (const auto& d : doors) {
    if (!(start + thickness + 2 <= d.lo || d.hi + 2 <= start)) return false;
  }
  return true;
}

inline std::vector<Interval> clip(const std::vector<Interval>& doors, long lo, long hi) {
  std::vector<Interval> out;
  for (const auto& d : doors) {
    if (d.lo >= lo && d.hi <= hi) out.push_back(d);
  }
  return out;
}

// Wall start positions along [lo, hi) leaving both sides >= min_extent.
inline std::vector<std::pair<long, long>> wall_candidates(long lo, long hi, const GenerateOptions& opt) {
  std::vector<std::pair<long, long>> out;  // (start, thickness)
  const long m = static_cast<long>(opt.min_room_extent);
  for (long t = 2; t <= 4; ++t) {
    for (long s = lo + m; s + t + m <= hi; ++s) {
      if (opt.align_to_stride) {
        // must cover pixels 8k+3 and 8k+4 around the sample centre 8k+3.5
        const long k = (s + 4) / 8;
        if (!(s <= 8 * k + 3 && s + t >= 8 * k + 5)) continue;
      }
      out.emplace_back(s, t);
    }
  }
  return out;
}

inline std::vector<Interval> door_candidates(long lo, long hi, const GenerateOptions& opt) {
  std::vector<Interval> out;
  for (long w = 6; w <= 10; ++w) {
    for (long s = lo + 2; s + w + 2 <= hi; ++s) {
      if (opt.align_to_stride) {
        bool covers = false;
        for (long k = s / 8 - 1; k <= (s + w) / 8 + 1; ++k) covers = covers || (s <= 8 * k + 3 && s + w >= 8 * k + 5);
        if (!covers) continue;
      }
      out.push_back({s, s + w});
    }
  }
  return out;
}

inline std::vector<Split> split_options(const std::vector<Region>& leaves, const GenerateOptions& opt) {
  std::vector<Split> out;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    const Region& r = leaves[i];
    for (auto [s, t] : wall_candidates(r.x0, r.x1, opt)) {
      if (clear_of(r.top, s, t) && clear_of(r.bottom, s, t)) out.push_back({i, {true, s, t, r.y0, r.y1, {}}});
    }
    for (auto [s, t] : wall_candidates(r.y0, r.y1, opt)) {
      if (clear_of(r.left, s, t) && clear_of(r.right, s, t)) out.push_back({i, {false, s, t, r.x0, r.x1, {}}});
    }
  }
  return out;
}

}  // namespace synth_detail

/// Generates one sample. Deterministic in (seed, options).
inline FloorPlanSample generate(std::uint64_t seed, const GenerateOptions& opt) {
  using namespace synth_detail;
  if (opt.size == 0 || opt.size % 8) throw ConfigError("generate: size must be a positive multiple of 8");
  if (opt.min_rooms == 0 || opt.min_rooms > opt.max_rooms) {
    throw ConfigError("generate: room count range must satisfy 1 <= min <= max");
  }
  if (opt.max_rooms > 65535) throw ConfigError("generate: at most 65535 rooms");
  const long n = static_cast<long>(opt.size);
  Rng rng(seed);
  const long target = rng.integer(static_cast<long>(opt.min_rooms), static_cast<long>(opt.max_rooms));
  const long perim = opt.align_to_stride ? 4 : rng.integer(2, 4);
  if (n - 2 * perim < static_cast<long>(opt.min_room_extent)) {
    throw ConfigError("generate: size " + std::to_string(opt.size) + " cannot hold a single room");
  }

  std::vector<Region> leaves;
  std::vector<Wall> walls;
  for (int attempt = 0; attempt < 32; ++attempt) {
    leaves = {Region{perim, n - perim, perim, n - perim, {}, {}, {}, {}}};
    walls.clear();
    while (static_cast<long>(leaves.size()) < target) {
      auto options = split_options(leaves, opt);
      if (options.empty()) break;
      Split sp = options[static_cast<std::size_t>(rng.integer(0, static_cast<long>(options.size()) - 1))];
      const auto doors = door_candidates(sp.wall.span_lo, sp.wall.span_hi, opt);
      if (doors.empty()) break;
      sp.wall.door = doors[static_cast<std::size_t>(rng.integer(0, static_cast<long>(doors.size()) - 1))];
      const Region r = leaves[sp.leaf];
      const Wall& w = sp.wall;
      Region a = r, b = r;
      if (w.vertical) {
        a.x1 = w.start;
        b.x0 = w.start + w.thickness;
        a.top = clip(r.top, a.x0, a.x1);
        a.bottom = clip(r.bottom, a.x0, a.x1);
        b.top = clip(r.top, b.x0, b.x1);
        b.bottom = clip(r.bottom, b.x0, b.x1);
        a.right = {w.door};
        b.left = {w.door};
      } else {
        a.y1 = w.start;
        b.y0 = w.start + w.thickness;
        a.left = clip(r.left, a.y0, a.y1);
        a.right = clip(r.right, a.y0, a.y1);
        b.left = clip(r.left, b.y0, b.y1);
        b.right = clip(r.right, b.y0, b.y1);
        a.bottom = {w.door};
        b.top = {w.door};
      }
      leaves[sp.leaf] = a;
      leaves.insert(leaves.begin() + static_cast<long>(sp.leaf) + 1, b);
      walls.push_back(w);
    }
    if (leaves.size() >= opt.min_rooms) break;
  }
  if (leaves.size() < opt.min_rooms) {
    throw ConfigError("generate: cannot fit " + std::to_string(opt.min_rooms) + " rooms of at least " +
                      std::to_string(opt.min_room_extent) + " px into a " + std::to_string(opt.size) + " px plan");
  }

  FloorPlanSample s;
  s.height = s.width = opt.size;
  s.room_labels = LabelMap(opt.size, opt.size, 0);
  s.boundary_labels = LabelMap(opt.size, opt.size, 1);
  Grid<std::uint16_t> ids(opt.size, opt.size, 0);
  std::vector<std::uint8_t> room_class(leaves.size());
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    const Region& r = leaves[i];
    room_class[i] = static_cast<std::uint8_t>(rng.integer(1, static_cast<long>(kRoomClasses) - 1));
    for (long y = r.y0; y < r.y1; ++y) {
      for (long x = r.x0; x < r.x1; ++x) {
        s.room_labels.at(y, x) = room_class[i];
        s.boundary_labels.at(y, x) = 0;
        ids.at(y, x) = static_cast<std::uint16_t>(i + 1);
      }
    }
  }
  for (const auto& w : walls) {
    for (long a = w.door.lo; a < w.door.hi; ++a) {
      for (long t = w.start; t < w.start + w.thickness; ++t) {
        if (w.vertical) s.boundary_labels.at(a, t) = 2;
        else s.boundary_labels.at(t, a) = 2;
      }
    }
  }

  s.image.resize(3 * opt.size * opt.size);
  const Rgb door = kPalette[static_cast<std::size_t>(PaletteClass::door_window)].color;
  for (std::size_t y = 0; y < opt.size; ++y) {
    for (std::size_t x = 0; x < opt.size; ++x) {
      std::uint8_t* px = &s.image[3 * (y * opt.size + x)];
      const auto b = s.boundary_labels.at(y, x);
      if (b == 1) {
        const auto v = static_cast<std::uint8_t>(rng.integer(0, 24));
        px[0] = px[1] = px[2] = v;
        continue;
      }
      Rgb base{255, 255, 255};
      double alpha = 0.5;
      if (b == 2) {
        base = door;
      } else {
        base = kPalette[room_to_palette(s.room_labels.at(y, x))].color;
        alpha = opt.tint;
      }
      const long noise = rng.integer(-opt.noise, opt.noise);
      const std::uint8_t c[3] = {base.r, base.g, base.b};
      for (int k = 0; k < 3; ++k) {
        const double tinted = 255.0 - alpha * (255.0 - c[k]);
        px[k] = static_cast<std::uint8_t>(std::clamp<long>(std::lround(tinted) + noise, 0, 255));
      }
    }
  }
  s.instances = RoomInstanceMap::from_ids(std::move(ids));
  return s;
}

inline FloorPlanSample generate(std::uint64_t seed, std::size_t size, std::pair<std::size_t, std::size_t> room_count_range) {
  GenerateOptions opt;
  opt.size = size;
  opt.min_rooms = room_count_range.first;
  opt.max_rooms = room_count_range.second;
  return generate(seed, opt);
}

/// Checks the structural invariants of a sample; returns an empty string when
/// they hold, otherwise a description of the first violation.
inline std::string check_sample(const FloorPlanSample& s) {
  const std::size_t n = s.height * s.width;
  if (s.image.size() != 3 * n || s.room_labels.size() != n || s.boundary_labels.size() != n ||
      s.instances.ids().size() != n) {
    return "plane sizes disagree";
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto b = s.boundary_labels.data[i];
    const auto r = s.room_labels.data[i];
    const auto id = s.instances.ids().data[i];
    if (b >= kBoundaryClasses || r >= kRoomClasses) return "label out of range at pixel " + std::to_string(i);
    if (b && (r || id)) return "boundary pixel " + std::to_string(i) + " carries a room label or instance";
    if (!b && (!r || !id)) return "interior pixel " + std::to_string(i) + " has no room";
  }
  if (!s.instances.connected()) return "an instance is not 4-connected";
  // one class per instance
  std::vector<int> cls(s.instances.count() + 1, -1);
  for (std::size_t i = 0; i < n; ++i) {
    const auto id = s.instances.ids().data[i];
    if (!id) continue;
    if (cls[id] == -1) cls[id] = s.room_labels.data[i];
    if (cls[id] != s.room_labels.data[i]) return "instance " + std::to_string(id) + " mixes room classes";
  }
  // enclosure: 4-neighbours of a room pixel are the same instance or boundary
  for (std::size_t y = 0; y < s.height; ++y) {
    for (std::size_t x = 0; x < s.width; ++x) {
      const auto id = s.instances.id_at(y, x);
      if (!id) continue;
      auto ok = [&](std::size_t yy, std::size_t xx) {
        return s.instances.id_at(yy, xx) == id || s.boundary_labels.at(yy, xx) != 0;
      };
      if ((y > 0 && !ok(y - 1, x)) || (y + 1 < s.height && !ok(y + 1, x)) || (x > 0 && !ok(y, x - 1)) ||
          (x + 1 < s.width && !ok(y, x + 1))) {
        return "instance " + std::to_string(id) + " touches another room without a boundary";
      }
    }
  }
  return {};
}

/// Each 4-connected region of non-boundary pixels takes the majority room
/// class of its pixels (ties to the smaller class). Boundary pixels keep
/// their input label.
inline LabelMap flood_fill_vote(const LabelMap& room_pred, const LabelMap& boundary_pred) {
  if (room_pred.height != boundary_pred.height || room_pred.width != boundary_pred.width) {
    throw ShapeError("flood_fill_vote: label maps differ in size");
  }
  LabelMap out = room_pred;
  const std::size_t h = room_pred.height, w = room_pred.width;
  std::vector<std::uint8_t> seen(h * w, 0);
  std::vector<std::size_t> region, stack;
  for (std::size_t start = 0; start < h * w; ++start) {
    if (seen[start] || boundary_pred.data[start]) continue;
    region.clear();
    stack.push_back(start);
    seen[start] = 1;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      region.push_back(p);
      const std::size_t y = p / w, x = p % w;
      auto visit = [&](std::size_t q) {
        if (!seen[q] && !boundary_pred.data[q]) {
          seen[q] = 1;
          stack.push_back(q);
        }
      };
      if (y > 0) visit(p - w);
      if (y + 1 < h) visit(p + w);
      if (x > 0) visit(p - 1);
      if (x + 1 < w) visit(p + 1);
    }
    std::map<std::uint8_t, std::size_t> votes;
    for (auto p : region) ++votes[room_pred.data[p]];
    std::uint8_t best = 0;
    std::size_t best_n = 0;
    for (const auto& [cls, count] : votes) {
      if (count > best_n) {
        best = cls;
        best_n = count;
      }
    }
    for (auto p : region) out.data[p] = best;
  }
  return out;
}

/// [3,H,W] network input, channels scaled to [-0.5, 0.5].
template <typename T>
Tensor<T> image_tensor(std::span<const std::uint8_t> rgb, std::size_t height, std::size_t width) {
  if (rgb.size() != 3 * height * width) throw ShapeError("image_tensor: buffer size mismatch");
  Tensor<T> t({3, height, width});
  for (std::size_t i = 0; i < height * width; ++i)
    for (std::size_t c = 0; c < 3; ++c) t[c * height * width + i] = static_cast<T>(rgb[3 * i + c]) / T{255} - T{0.5};
  return t;
}

template <typename T>
Tensor<T> image_tensor(const FloorPlanSample& s) {
  return image_tensor<T>(s.image, s.height, s.width);
}

}  // namespace ogaseg
