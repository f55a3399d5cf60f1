#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ogaseg/errors.hpp"
#include "ogaseg/tensor.hpp"

namespace ogaseg {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
};

/// Ordered, named parameter list. Order is the checkpoint record order.
template <typename T>
class ParamStore {
 public:
  std::size_t add(std::string name, Tensor<T> value) {
    if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    params_.push_back({std::move(name), std::move(value)});
    return params_.size() - 1;
  }

  std::optional<std::size_t> find(std::string_view name) const {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (params_[i].name == name) return i;
    }
    return std::nullopt;
  }

  std::size_t size() const { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& p : params_) out.add(p.name, p.value.template cast<U>());
    return out;
  }

 private:
  std::vector<Parameter<T>> params_;
};

inline constexpr std::string_view kCheckpointMagic = "OGASEG1";

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

inline void put_f32(std::ostream& os, float f) {
  const auto v = std::bit_cast<std::uint32_t>(f);
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

inline bool get_bytes(std::istream& is, unsigned char* b, std::size_t n) {
  is.read(reinterpret_cast<char*>(b), static_cast<std::streamsize>(n));
  return static_cast<std::size_t>(is.gcount()) == n;
}

inline std::uint64_t get_u64(std::istream& is, const std::string& path) {
  unsigned char b[8];
  if (!get_bytes(is, b, 8)) throw FormatError("checkpoint " + path + ": truncated integer field");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace detail

/// Flat binary container: magic "OGASEG1", then per parameter
/// u64 name length, name bytes, u64 rank, u64 extents, f32 data (all LE).
template <typename T>
void save_checkpoint(const std::string& path, const ParamStore<T>& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open checkpoint for writing: " + path);
  os.write(kCheckpointMagic.data(), static_cast<std::streamsize>(kCheckpointMagic.size()));
  for (const auto& p : params) {
    detail::put_u64(os, p.name.size());
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::put_u64(os, p.value.rank());
    for (auto e : p.value.shape()) detail::put_u64(os, e);
    for (T v : p.value.data()) detail::put_f32(os, static_cast<float>(v));
  }
  if (!os) throw FormatError("write failed for checkpoint " + path);
}

inline std::vector<Parameter<float>> read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint: " + path);
  std::string magic(kCheckpointMagic.size(), '\0');
  is.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (magic != kCheckpointMagic) throw FormatError("checkpoint " + path + ": bad magic");
  std::vector<Parameter<float>> out;
  while (is.peek() != std::char_traits<char>::eof()) {
    const auto len = detail::get_u64(is, path);
    if (len > (1u << 16)) throw FormatError("checkpoint " + path + ": implausible name length");
    std::string name(len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(len));
    if (static_cast<std::uint64_t>(is.gcount()) != len) throw FormatError("checkpoint " + path + ": truncated name");
    const auto rank = detail::get_u64(is, path);
    if (rank > 8) throw FormatError("checkpoint " + path + ": implausible rank for " + name);
    Shape shape(rank);
    for (auto& e : shape) e = detail::get_u64(is, path);
    std::vector<float> data(shape_size(shape));
    for (auto& v : data) {
      unsigned char b[4];
      if (!detail::get_bytes(is, b, 4)) throw FormatError("checkpoint " + path + ": truncated data for " + name);
      std::uint32_t u = 0;
      for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(b[i]) << (8 * i);
      v = std::bit_cast<float>(u);
    }
    out.push_back({std::move(name), Tensor<float>(std::move(shape), std::move(data))});
  }
  return out;
}

/// Overwrites every parameter of `params` from the file; names and shapes must
/// match exactly.
template <typename T>
void load_checkpoint(const std::string& path, ParamStore<T>& params) {
  auto records = read_checkpoint(path);
  if (records.size() != params.size()) {
    throw FormatError("checkpoint " + path + ": " + std::to_string(records.size()) + " records, model has " +
                      std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& p = params[i];
    if (records[i].name != p.name || records[i].value.shape() != p.value.shape()) {
      throw FormatError("checkpoint " + path + ": record " + records[i].name + shape_str(records[i].value.shape()) +
                        " does not match parameter " + p.name + shape_str(p.value.shape()));
    }
    p.value = records[i].value.template cast<T>();
  }
}

}  // namespace ogaseg
