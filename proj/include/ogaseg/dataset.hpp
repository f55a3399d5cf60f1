#pragma once

// On-disk layout:
//   <root>/<split>/manifest.txt          one sample id per line
//   <root>/<split>/<id>/image.png        RGB8
//   <root>/<split>/<id>/rooms.png        8-bit indexed, normative palette
//   <root>/<split>/<id>/bounds.png       8-bit indexed, normative palette
//   <root>/<split>/<id>/inst.png         16-bit grayscale instance ids

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ogaseg/png_io.hpp"
#include "ogaseg/synth.hpp"

namespace ogaseg {

namespace fs = std::filesystem;

inline void save_sample(const FloorPlanSample& s, const fs::path& dir) {
  fs::create_directories(dir);
  png::write_rgb((dir / "image.png").string(), s.width, s.height, s.image);
  LabelMap rooms = s.room_labels;
  for (auto& v : rooms.data) v = room_to_palette(v);
  png::write_indexed((dir / "rooms.png").string(), rooms);
  png::write_indexed((dir / "bounds.png").string(), s.boundary_labels);
  png::write_gray16((dir / "inst.png").string(), s.instances.ids());
}

namespace dataset_detail {

inline std::string color_str(Rgb c) {
  return "(" + std::to_string(c.r) + "," + std::to_string(c.g) + "," + std::to_string(c.b) + ")";
}

// Maps a palette-coloured label plane back to class indices via `to_class`.
template <typename F>
LabelMap decode_labels(const png::Image& img, const std::string& path, F&& to_class) {
  if (img.channels != 3 || img.bit_depth != 8) throw FormatError(path + ": expected an 8-bit palette or RGB image");
  LabelMap out(img.height, img.width, 0);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      const Rgb c{static_cast<std::uint8_t>(img.at(y, x, 0)), static_cast<std::uint8_t>(img.at(y, x, 1)),
                  static_cast<std::uint8_t>(img.at(y, x, 2))};
      const auto idx = palette_index(c);
      if (!idx) {
        throw FormatError(path + ": pixel (" + std::to_string(y) + "," + std::to_string(x) + ") has colour " +
                          color_str(c) + " which is not in the palette");
      }
      const auto cls = to_class(*idx);
      if (!cls) {
        throw FormatError(path + ": pixel (" + std::to_string(y) + "," + std::to_string(x) + ") has palette colour " +
                          color_str(c) + " (" + std::string(kPalette[*idx].name) + ") not valid in this plane");
      }
      out.at(y, x) = *cls;
    }
  }
  return out;
}

}  // namespace dataset_detail

inline FloorPlanSample load_sample(const fs::path& dir) {
  auto need = [&](const char* name) {
    const fs::path p = dir / name;
    if (!fs::exists(p)) throw FormatError("missing " + p.string());
    return p.string();
  };
  const std::string image_path = need("image.png"), rooms_path = need("rooms.png"), bounds_path = need("bounds.png"),
                    inst_path = need("inst.png");
  const png::Image image = png::read(image_path);
  if (image.channels != 3 || image.bit_depth != 8) throw FormatError(image_path + ": expected RGB8");
  FloorPlanSample s;
  s.height = image.height;
  s.width = image.width;
  s.image.assign(image.samples.begin(), image.samples.end());

  auto check_size = [&](const png::Image& img, const std::string& path) {
    if (img.width != s.width || img.height != s.height) {
      throw FormatError(path + ": size " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                        " differs from image.png");
    }
  };
  const png::Image rooms = png::read(rooms_path);
  check_size(rooms, rooms_path);
  s.room_labels = dataset_detail::decode_labels(rooms, rooms_path, palette_to_room);
  const png::Image bounds = png::read(bounds_path);
  check_size(bounds, bounds_path);
  s.boundary_labels = dataset_detail::decode_labels(bounds, bounds_path, palette_to_boundary);
  const png::Image inst = png::read(inst_path);
  check_size(inst, inst_path);
  if (inst.channels != 1 || inst.bit_depth != 16) throw FormatError(inst_path + ": expected 16-bit grayscale");
  Grid<std::uint16_t> ids(s.height, s.width, 0);
  std::copy(inst.samples.begin(), inst.samples.end(), ids.data.begin());
  try {
    s.instances = RoomInstanceMap::from_ids(std::move(ids));
  } catch (const std::invalid_argument& e) {
    throw FormatError(inst_path + ": " + e.what());
  }
  return s;
}

inline std::string sample_id(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06zu", index);
  return buf;
}

inline void write_manifest(const fs::path& split_dir, const std::vector<std::string>& ids) {
  fs::create_directories(split_dir);
  std::ofstream os(split_dir / "manifest.txt", std::ios::trunc);
  if (!os) throw FormatError("cannot write " + (split_dir / "manifest.txt").string());
  for (const auto& id : ids) os << id << '\n';
}

inline std::vector<std::string> read_manifest(const fs::path& split_dir) {
  std::ifstream is(split_dir / "manifest.txt");
  if (!is) throw FormatError("missing " + (split_dir / "manifest.txt").string());
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) ids.push_back(line);
  }
  return ids;
}

inline void save_split(const fs::path& split_dir, const std::vector<FloorPlanSample>& samples) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    ids.push_back(sample_id(i));
    save_sample(samples[i], split_dir / ids.back());
  }
  write_manifest(split_dir, ids);
}

inline std::vector<FloorPlanSample> load_split(const fs::path& split_dir) {
  std::vector<FloorPlanSample> out;
  for (const auto& id : read_manifest(split_dir)) out.push_back(load_sample(split_dir / id));
  if (out.empty()) throw FormatError(split_dir.string() + ": manifest lists no samples");
  return out;
}

/// Samples seeded `seed, seed + 1, ...`.
inline std::vector<FloorPlanSample> generate_set(std::uint64_t seed, std::size_t count, const GenerateOptions& opt) {
  std::vector<FloorPlanSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate(seed + i, opt));
  return out;
}

}  // namespace ogaseg
