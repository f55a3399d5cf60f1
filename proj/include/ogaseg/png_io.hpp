#pragma once

// Thin libpng wrappers for the four raster encodings the dataset uses:
// RGB8, palette-indexed 8-bit, 8-bit grayscale and 16-bit grayscale.

#include <png.h>

#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ogaseg/errors.hpp"
#include "ogaseg/geometry.hpp"
#include "ogaseg/palette.hpp"

namespace ogaseg::png {

struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;  // 1 (gray) or 3 (rgb)
  int bit_depth = 8;         // 8 or 16
  std::vector<std::uint16_t> samples;  // row-major, interleaved

  std::uint16_t at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return samples[(y * width + x) * channels + c];
  }
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

inline File open(const std::string& path, const char* mode) {
  File f(std::fopen(path.c_str(), mode));
  if (!f) throw FormatError("cannot open " + path);
  return f;
}

// Rows must already be encoded in the target format; `palette` is only used
// for PNG_COLOR_TYPE_PALETTE. Containers live in the caller so nothing in the
// setjmp frame is modified after the jump point.
inline bool write_rows(std::FILE* file, png_structp png, png_infop info, std::size_t width, std::size_t height,
                       int color_type, int bit_depth, png_bytepp rows, png_colorp plte, int plte_size) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_init_io(png, file);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_PLTE(png, info, plte, plte_size);
  png_set_rows(png, info, rows);
  png_write_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
  return true;
}

inline void write(const std::string& path, std::size_t width, std::size_t height, int color_type, int bit_depth,
                  const std::vector<std::uint8_t>& bytes, std::size_t row_bytes, std::span<const Rgb> palette = {}) {
  File file = open(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw FormatError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  std::vector<png_bytep> rows(height);
  for (std::size_t y = 0; y < height; ++y) rows[y] = const_cast<png_bytep>(bytes.data() + y * row_bytes);
  std::vector<png_color> plte(palette.size());
  for (std::size_t i = 0; i < palette.size(); ++i) plte[i] = {palette[i].r, palette[i].g, palette[i].b};
  const bool ok = info && write_rows(file.get(), png, info, width, height, color_type, bit_depth, rows.data(),
                                     plte.data(), static_cast<int>(plte.size()));
  png_destroy_write_struct(&png, &info);
  if (!ok) throw FormatError("libpng error while writing " + path);
}

struct ReadState {
  std::size_t width = 0, height = 0, channels = 0, row_bytes = 0;
  int bit_depth = 0;
  std::vector<std::uint8_t> bytes;
  std::vector<png_bytep> rows;
};

inline bool read_rows(std::FILE* file, png_structp png, png_infop info, ReadState& st) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_init_io(png, file);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  st.width = png_get_image_width(png, info);
  st.height = png_get_image_height(png, info);
  st.channels = png_get_channels(png, info);
  st.bit_depth = png_get_bit_depth(png, info);
  st.row_bytes = png_get_rowbytes(png, info);
  st.bytes.resize(st.row_bytes * st.height);
  st.rows.resize(st.height);
  for (std::size_t y = 0; y < st.height; ++y) st.rows[y] = st.bytes.data() + y * st.row_bytes;
  png_read_image(png, st.rows.data());
  png_read_end(png, nullptr);
  return true;
}

}  // namespace detail

/// Reads any 8/16-bit PNG; palette images are expanded to RGB, alpha is
/// dropped, sub-byte grayscale is widened to 8 bits.
inline Image read(const std::string& path) {
  detail::File file = detail::open(path, "rb");
  unsigned char sig[8] = {};
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8)) throw FormatError(path + ": not a PNG file");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw FormatError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  detail::ReadState st;
  const bool ok = info && detail::read_rows(file.get(), png, info, st);
  png_destroy_read_struct(&png, &info, nullptr);
  if (!ok) throw FormatError(path + ": malformed PNG");
  Image img;
  img.width = st.width;
  img.height = st.height;
  img.channels = st.channels;
  img.bit_depth = st.bit_depth;
  const std::size_t row_bytes = st.row_bytes;
  const auto& bytes = st.bytes;

  if (img.channels != 1 && img.channels != 3) {
    throw FormatError(path + ": unsupported channel count " + std::to_string(img.channels));
  }
  const std::size_t n = img.width * img.height * img.channels;
  img.samples.resize(n);
  for (std::size_t y = 0; y < img.height; ++y) {
    const std::uint8_t* row = bytes.data() + y * row_bytes;
    for (std::size_t i = 0; i < img.width * img.channels; ++i) {
      img.samples[y * img.width * img.channels + i] =
          img.bit_depth == 16 ? static_cast<std::uint16_t>((row[2 * i] << 8) | row[2 * i + 1]) : row[i];
    }
  }
  return img;
}

/// Interleaved RGB8, `rgb.size() == 3 * width * height`.
inline void write_rgb(const std::string& path, std::size_t width, std::size_t height, std::span<const std::uint8_t> rgb) {
  if (rgb.size() != 3 * width * height) throw ShapeError("write_rgb: buffer size mismatch for " + path);
  detail::write(path, width, height, PNG_COLOR_TYPE_RGB, 8, std::vector<std::uint8_t>(rgb.begin(), rgb.end()), 3 * width);
}

/// 8-bit palette-indexed image whose PLTE is the normative class palette.
inline void write_indexed(const std::string& path, const Grid<std::uint8_t>& indices) {
  for (auto v : indices.data)
    if (v >= kPaletteSize) throw FormatError("write_indexed: palette index " + std::to_string(v) + " out of range");
  std::vector<Rgb> colors;
  for (const auto& e : kPalette) colors.push_back(e.color);
  detail::write(path, indices.width, indices.height, PNG_COLOR_TYPE_PALETTE, 8, indices.data, indices.width, colors);
}

inline void write_gray8(const std::string& path, const Grid<std::uint8_t>& g) {
  detail::write(path, g.width, g.height, PNG_COLOR_TYPE_GRAY, 8, g.data, g.width);
}

inline void write_gray16(const std::string& path, const Grid<std::uint16_t>& g) {
  std::vector<std::uint8_t> bytes(2 * g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    bytes[2 * i] = static_cast<std::uint8_t>(g.data[i] >> 8);
    bytes[2 * i + 1] = static_cast<std::uint8_t>(g.data[i] & 0xff);
  }
  detail::write(path, g.width, g.height, PNG_COLOR_TYPE_GRAY, 16, bytes, 2 * g.width);
}

}  // namespace ogaseg::png
