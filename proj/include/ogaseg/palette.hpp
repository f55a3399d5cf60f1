#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>

namespace ogaseg {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// Palette classes. Room-branch class r > 0 is palette index r + 2; boundary
/// class b is palette index b.
enum class PaletteClass : std::uint8_t {
  background = 0,
  wall = 1,
  door_window = 2,
  closet = 3,
  bathroom = 4,
  living_room = 5,
  bedroom = 6,
  hall = 7,
  balcony = 8,
};

inline constexpr std::size_t kPaletteSize = 9;
inline constexpr std::size_t kRoomClasses = 7;      // background + 6 room types
inline constexpr std::size_t kBoundaryClasses = 3;  // none, wall, door & window

struct PaletteEntry {
  std::string_view name;
  Rgb color;
};

inline constexpr std::array<PaletteEntry, kPaletteSize> kPalette{{
    {"background", {0, 0, 0}},
    {"wall", {64, 64, 64}},
    {"door_window", {255, 60, 128}},
    {"closet", {192, 192, 224}},
    {"bathroom", {192, 255, 255}},
    {"living_room", {224, 255, 192}},
    {"bedroom", {255, 224, 128}},
    {"hall", {255, 160, 96}},
    {"balcony", {255, 224, 224}},
}};

inline std::optional<std::uint8_t> palette_index(Rgb c) {
  for (std::size_t i = 0; i < kPalette.size(); ++i)
    if (kPalette[i].color == c) return static_cast<std::uint8_t>(i);
  return std::nullopt;
}

inline std::uint8_t room_to_palette(std::uint8_t room_class) {
  return room_class == 0 ? 0 : static_cast<std::uint8_t>(room_class + 2);
}

inline std::optional<std::uint8_t> palette_to_room(std::uint8_t index) {
  if (index == 0) return 0;
  if (index >= 3 && index < kPaletteSize) return static_cast<std::uint8_t>(index - 2);
  return std::nullopt;
}

inline std::optional<std::uint8_t> palette_to_boundary(std::uint8_t index) {
  if (index < kBoundaryClasses) return index;
  return std::nullopt;
}

/// Combined label: predicted boundary wins, otherwise the room class.
inline std::uint8_t merge_labels(std::uint8_t room_class, std::uint8_t boundary_class) {
  return boundary_class ? boundary_class : room_to_palette(room_class);
}

}  // namespace ogaseg
