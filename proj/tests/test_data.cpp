#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "ogaseg/dataset.hpp"
#include "ogaseg/metrics.hpp"

namespace ogaseg {
namespace {

namespace fs = std::filesystem;

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::path(::testing::TempDir()) / ("ogaseg_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TEST(Generate, SameSeedSameSample) {
  EXPECT_EQ(generate(42, GenerateOptions{}), generate(42, GenerateOptions{}));
  EXPECT_NE(generate(42, GenerateOptions{}).image, generate(43, GenerateOptions{}).image);
}

TEST(Generate, SingleRoomSpansTheInterior) {
  const auto s = generate(3, 64, {1, 1});
  EXPECT_EQ(s.instances.count(), 1u);
  EXPECT_EQ(check_sample(s), "");
  std::size_t interior = 0;
  for (auto v : s.boundary_labels.data) interior += v == 0 ? 1 : 0;
  std::size_t room = 0;
  for (auto v : s.instances.ids().data) room += v ? 1 : 0;
  EXPECT_EQ(room, interior);
}

TEST(Generate, RoomCountStaysInRange) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto s = generate(seed, 64, {2, 4});
    EXPECT_GE(s.instances.count(), 2u);
    EXPECT_LE(s.instances.count(), 4u);
  }
}

TEST(Generate, SamplesSatisfyInvariantsAndFloodFillOracle) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto s = generate(seed, GenerateOptions{});
    ASSERT_EQ(check_sample(s), "") << "seed " << seed;
    EXPECT_EQ(flood_fill_vote(s.room_labels, s.boundary_labels), s.room_labels) << "seed " << seed;
    EXPECT_EQ(room_consistency(s.room_labels, s.instances), 1.0);
  }
}

TEST(Generate, FeatureGridKeepsEveryRoom) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto s = generate(seed, GenerateOptions{});
    const auto small = downsample_instances(s.instances.ids(), 8);
    EXPECT_EQ(small.count(), s.instances.count()) << "seed " << seed;
    EXPECT_TRUE(small.connected()) << "seed " << seed;
  }
}

TEST(Generate, LargerCanvas) {
  const auto s = generate(5, 128, {3, 6});
  EXPECT_EQ(check_sample(s), "");
  EXPECT_EQ(s.height, 128u);
}

TEST(Generate, InfeasibleConstraintsAreConfigErrors) {
  EXPECT_THROW(generate(1, 64, {30, 30}), ConfigError);
  EXPECT_THROW(generate(1, 60, {1, 2}), ConfigError);
  EXPECT_THROW(generate(1, 64, {3, 2}), ConfigError);
  EXPECT_THROW(generate(1, 64, {0, 2}), ConfigError);
}

TEST(Palette, IndexMappingIsBijective) {
  std::set<std::uint8_t> seen;
  for (std::uint8_t r = 0; r < kRoomClasses; ++r) {
    const auto p = room_to_palette(r);
    EXPECT_EQ(palette_to_room(p), r);
    seen.insert(p);
  }
  for (std::uint8_t b = 1; b < kBoundaryClasses; ++b) seen.insert(merge_labels(0, b));
  EXPECT_EQ(seen.size(), kPaletteSize);
  EXPECT_FALSE(palette_to_room(1).has_value());
  EXPECT_FALSE(palette_to_boundary(5).has_value());
  EXPECT_FALSE(palette_index({1, 2, 3}).has_value());
}

TEST(Dataset, SaveLoadRoundTrip) {
  const fs::path dir = temp_dir("roundtrip");
  const auto s = generate(9, GenerateOptions{});
  save_sample(s, dir / "a");
  EXPECT_EQ(load_sample(dir / "a"), s);
}

TEST(Dataset, SplitRoundTripAndManifest) {
  const fs::path dir = temp_dir("split");
  const auto data = generate_set(20, 3, GenerateOptions{});
  save_split(dir / "train", data);
  EXPECT_EQ(read_manifest(dir / "train"), (std::vector<std::string>{"000000", "000001", "000002"}));
  EXPECT_EQ(load_split(dir / "train"), data);
  write_manifest(dir / "empty", {});
  EXPECT_THROW(load_split(dir / "empty"), FormatError);
  EXPECT_THROW(load_split(dir / "missing"), FormatError);
}

TEST(Dataset, UnknownPaletteColourNamesPixelAndColour) {
  const fs::path dir = temp_dir("badcolour");
  const auto s = generate(2, GenerateOptions{});
  save_sample(s, dir);
  // RGB rooms plane with one off-palette pixel
  std::vector<std::uint8_t> rgb(3 * s.width * s.height, 0);
  rgb[3 * (5 * s.width + 7) + 1] = 17;
  png::write_rgb((dir / "rooms.png").string(), s.width, s.height, rgb);
  try {
    load_sample(dir);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(5,7)"), std::string::npos) << msg;
    EXPECT_NE(msg.find("(0,17,0)"), std::string::npos) << msg;
  }
}

TEST(Dataset, BoundaryColourInRoomsPlaneIsRejected) {
  const fs::path dir = temp_dir("wrongplane");
  const auto s = generate(2, GenerateOptions{});
  save_sample(s, dir);
  png::write_indexed((dir / "rooms.png").string(), LabelMap(s.height, s.width, 1));
  EXPECT_THROW(load_sample(dir), FormatError);
}

TEST(Dataset, MissingAndMismatchedFiles) {
  const fs::path dir = temp_dir("missing");
  const auto s = generate(2, GenerateOptions{});
  save_sample(s, dir);
  png::write_indexed((dir / "bounds.png").string(), LabelMap(8, 8, 0));
  EXPECT_THROW(load_sample(dir), FormatError);
  fs::remove(dir / "inst.png");
  EXPECT_THROW(load_sample(dir), FormatError);
}

TEST(Dataset, SixteenBitInstanceIdsSurvive) {
  const fs::path dir = temp_dir("id300");
  // 16x20 plan where every pixel is its own room: ids 1..320
  FloorPlanSample s;
  s.height = 16;
  s.width = 20;
  s.image.assign(3 * 320, 200);
  s.room_labels = LabelMap(16, 20, 4);
  s.boundary_labels = LabelMap(16, 20, 0);
  Grid<std::uint16_t> ids(16, 20);
  for (std::size_t i = 0; i < ids.size(); ++i) ids.data[i] = static_cast<std::uint16_t>(i + 1);
  s.instances = RoomInstanceMap::from_ids(ids);
  save_sample(s, dir);
  const auto back = load_sample(dir);
  EXPECT_EQ(back, s);
  EXPECT_EQ(back.instances.id_at(14, 19), 300);
}

TEST(Dataset, ImageTensorScaling) {
  const std::vector<std::uint8_t> rgb{0, 255, 51, 255, 0, 102};
  const auto t = image_tensor<double>(rgb, 1, 2);
  EXPECT_EQ(t.shape(), (Shape{3, 1, 2}));
  EXPECT_DOUBLE_EQ(t[0], -0.5);
  EXPECT_DOUBLE_EQ(t[1], 0.5);
  EXPECT_DOUBLE_EQ(t[2], 0.5);
  EXPECT_DOUBLE_EQ(t[4], 51.0 / 255.0 - 0.5);
}

}  // namespace
}  // namespace ogaseg
