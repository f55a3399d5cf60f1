#pragma once

// Full segmentation model: residual backbone (total stride 8) feeding an
// offset head, a room branch with offset-guided attention, a boundary branch,
// channel-gated fusion of the two branches, and 1x1 prediction heads whose
// logits are bilinearly upsampled back to input resolution.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ogaseg/attention.hpp"
#include "ogaseg/checkpoint.hpp"
#include "ogaseg/fusion.hpp"
#include "ogaseg/geometry.hpp"
#include "ogaseg/kv_config.hpp"
#include "ogaseg/random.hpp"

namespace ogaseg {

struct ModelConfig {
  std::size_t input_size = 64;
  std::vector<std::size_t> backbone_channels{16, 32, 64};
  std::vector<std::size_t> backbone_strides{2, 2, 2};
  std::size_t branch_channels = 32;
  std::size_t num_room_classes = 7;
  std::size_t num_boundary_classes = 3;
  AttentionConfig attention;
  FusionConfig fusion;

  std::size_t stride() const {
    std::size_t s = 1;
    for (auto v : backbone_strides) s *= v;
    return s;
  }

  void validate() const {
    if (backbone_channels.empty() || backbone_channels.size() != backbone_strides.size()) {
      throw ConfigError("backbone_channels and backbone_strides must be non-empty and of equal length");
    }
    for (auto c : backbone_channels)
      if (c == 0) throw ConfigError("backbone channel count must be positive");
    if (stride() != 8) throw ConfigError("backbone stride product must be 8, got " + std::to_string(stride()));
    if (branch_channels == 0) throw ConfigError("branch_channels must be positive");
    if (num_room_classes < 2) throw ConfigError("num_room_classes must be at least 2");
    if (num_boundary_classes < 2) throw ConfigError("num_boundary_classes must be at least 2");
    if (input_size == 0 || input_size % 8) throw ConfigError("input_size must be a positive multiple of 8");
    if (!(attention.temperature > 0)) throw ConfigError("attention temperature must be positive");
  }

  KeyValues to_key_values() const {
    return {
        {"input_size", std::to_string(input_size)},
        {"backbone_channels", kv::join(backbone_channels)},
        {"backbone_strides", kv::join(backbone_strides)},
        {"branch_channels", std::to_string(branch_channels)},
        {"num_room_classes", std::to_string(num_room_classes)},
        {"num_boundary_classes", std::to_string(num_boundary_classes)},
        {"use_oga", attention.enabled ? "1" : "0"},
        {"use_softmax", attention.use_softmax ? "1" : "0"},
        {"attention_mode", attention.mode == AffinityMode::offset_guided ? "offset_guided" : "absolute_distance"},
        {"negate_distance", attention.negate_distance ? "1" : "0"},
        {"temperature", std::to_string(attention.temperature)},
        {"pool_mode", fusion.pool == PoolMode::avg ? "avg" : "max"},
        {"ffa_room", fusion.room ? "1" : "0"},
        {"ffa_boundary", fusion.boundary ? "1" : "0"},
    };
  }

  /// Applies recognised keys over the defaults; unknown keys are left for
  /// other consumers (the trainer shares the same file).
  static ModelConfig from_key_values(const KeyValues& values) {
    ModelConfig c;
    auto get = [&](const char* k) -> const std::string* {
      auto it = values.find(k);
      return it == values.end() ? nullptr : &it->second;
    };
    if (auto v = get("input_size")) c.input_size = kv::to_size("input_size", *v);
    if (auto v = get("backbone_channels")) c.backbone_channels = kv::to_size_list("backbone_channels", *v);
    if (auto v = get("backbone_strides")) c.backbone_strides = kv::to_size_list("backbone_strides", *v);
    if (auto v = get("branch_channels")) c.branch_channels = kv::to_size("branch_channels", *v);
    if (auto v = get("num_room_classes")) c.num_room_classes = kv::to_size("num_room_classes", *v);
    if (auto v = get("num_boundary_classes")) c.num_boundary_classes = kv::to_size("num_boundary_classes", *v);
    if (auto v = get("use_oga")) c.attention.enabled = kv::to_bool("use_oga", *v);
    if (auto v = get("use_softmax")) c.attention.use_softmax = kv::to_bool("use_softmax", *v);
    if (auto v = get("attention_mode")) {
      if (*v == "offset_guided") c.attention.mode = AffinityMode::offset_guided;
      else if (*v == "absolute_distance") c.attention.mode = AffinityMode::absolute_distance;
      else throw ConfigError("attention_mode must be offset_guided or absolute_distance, got '" + *v + "'");
    }
    if (auto v = get("negate_distance")) c.attention.negate_distance = kv::to_bool("negate_distance", *v);
    if (auto v = get("temperature")) c.attention.temperature = kv::to_double("temperature", *v);
    if (auto v = get("pool_mode")) {
      if (*v == "avg") c.fusion.pool = PoolMode::avg;
      else if (*v == "max") c.fusion.pool = PoolMode::max;
      else throw ConfigError("pool_mode must be avg or max, got '" + *v + "'");
    }
    if (auto v = get("ffa_room")) c.fusion.room = kv::to_bool("ffa_room", *v);
    if (auto v = get("ffa_boundary")) c.fusion.boundary = kv::to_bool("ffa_boundary", *v);
    c.validate();
    return c;
  }
};

template <typename T>
struct ModelOutput {
  Tensor<T> room_logits;      // [R,H,W]
  Tensor<T> boundary_logits;  // [B,H,W]
  OffsetField offsets;        // feature resolution, all valid
};

template <typename T>
struct ForwardVars {
  Var<T> room_logits;
  Var<T> boundary_logits;
  Var<T> offsets;    // predicted [2,h,w]
  Var<T> attention;  // attention map consumed by the room branch (unset when bypassed)
};

enum class ParamGroup { backbone, offset_head, room, boundary, fusion };

template <typename T>
class Model {
 public:
  static Model build(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Model m;
    m.config_ = config;
    Rng rng(seed);
    auto conv = [&](const std::string& name, std::size_t cout, std::size_t cin, std::size_t k, ParamGroup group) {
      const double scale = std::sqrt(2.0 / static_cast<double>(cin * k * k));
      Tensor<T> w({cout, cin, k, k});
      for (auto& v : w.vec()) v = static_cast<T>(rng.normal() * scale);
      m.add(name + ".weight", std::move(w), group);
      m.add(name + ".bias", Tensor<T>({cout}), group);
    };
    std::size_t cin = 3;
    for (std::size_t s = 0; s < config.backbone_channels.size(); ++s) {
      const std::size_t c = config.backbone_channels[s];
      const std::string p = "backbone.stage" + std::to_string(s + 1);
      conv(p + ".down", c, cin, 3, ParamGroup::backbone);
      conv(p + ".res1", c, c, 3, ParamGroup::backbone);
      conv(p + ".res2", c, c, 3, ParamGroup::backbone);
      cin = c;
    }
    const std::size_t d = config.branch_channels;
    conv("offset.conv1", d, cin, 3, ParamGroup::offset_head);
    conv("offset.conv2", 2, d, 3, ParamGroup::offset_head);
    conv("room.conv", d, cin, 3, ParamGroup::room);
    conv("room.reduce", d, 2 * d, 1, ParamGroup::room);
    conv("room.head", config.num_room_classes, d, 1, ParamGroup::room);
    conv("boundary.conv", d, cin, 3, ParamGroup::boundary);
    conv("boundary.head", config.num_boundary_classes, d, 1, ParamGroup::boundary);
    m.add("ffa.weight", Tensor<T>({2 * d, 2 * d}), ParamGroup::fusion);
    m.add("ffa.bias", Tensor<T>({2 * d}), ParamGroup::fusion);
    return m;
  }

  const ModelConfig& config() const { return config_; }
  ModelConfig& mutable_config() { return config_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  ParamGroup group(std::size_t i) const { return groups_.at(i); }

  template <typename U>
  Model<U> cast() const {
    Model<U> m;
    m.config_ = config_;
    m.params_ = params_.template cast<U>();
    m.groups_ = groups_;
    return m;
  }

  /// Puts every parameter on the tape as a leaf; `trainable(i)` decides which
  /// ones require grad.
  template <typename Pred>
  std::vector<Var<T>> bind(Tape<T>& tape, Pred&& trainable) const {
    std::vector<Var<T>> vars;
    vars.reserve(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) vars.push_back(tape.leaf(params_[i].value, trainable(i)));
    return vars;
  }

  std::vector<Var<T>> bind(Tape<T>& tape, bool requires_grad = false) const {
    return bind(tape, [requires_grad](std::size_t) { return requires_grad; });
  }

  /// Forward over bound parameters. When `teacher_offsets` is set the
  /// attention consumes it instead of the predicted offsets.
  ForwardVars<T> forward(const std::vector<Var<T>>& p, Var<T> image,
                         std::optional<Var<T>> teacher_offsets = std::nullopt) const {
    const Shape& is = image.shape();
    if (is.size() != 3 || is[0] != 3 || is[1] % 8 || is[2] % 8 || is[1] == 0 || is[2] == 0) {
      throw ShapeError("model input must be [3,H,W] with H, W positive multiples of 8, got " + shape_str(is));
    }
    if (p.size() != params_.size()) throw std::invalid_argument("forward: parameter binding size mismatch");
    auto param = [&](const std::string& name) {
      const auto i = params_.find(name);
      if (!i) throw std::logic_error("model has no parameter " + name);
      return p[*i];
    };
    auto conv = [&](Var<T> x, const std::string& name, std::size_t stride, std::size_t pad) {
      return ops::conv2d(x, param(name + ".weight"), param(name + ".bias"), stride, pad);
    };
    Var<T> x = image;
    for (std::size_t s = 0; s < config_.backbone_channels.size(); ++s) {
      const std::string stage = "backbone.stage" + std::to_string(s + 1);
      x = ops::relu(conv(x, stage + ".down", config_.backbone_strides[s], 1));
      Var<T> r = ops::relu(conv(x, stage + ".res1", 1, 1));
      r = conv(r, stage + ".res2", 1, 1);
      x = ops::relu(ops::add(x, r));
    }
    const Var<T> feat = x;
    ForwardVars<T> out;
    out.offsets = conv(ops::relu(conv(feat, "offset.conv1", 1, 1)), "offset.conv2", 1, 1);
    const std::size_t h = feat.shape()[1], w = feat.shape()[2];
    Var<T> att_offsets = out.offsets;
    if (teacher_offsets) {
      if (teacher_offsets->shape() != Shape{2, h, w}) {
        throw ShapeError("teacher offsets " + shape_str(teacher_offsets->shape()) + " do not match feature map " +
                         shape_str({2, h, w}));
      }
      att_offsets = *teacher_offsets;
    }
    const Var<T> f_room = ops::relu(conv(feat, "room.conv", 1, 1));
    Var<T> enhanced;
    if (config_.attention.enabled) {
      out.attention = attention::attention_map(att_offsets, config_.attention);
      const Var<T> twice = attention::aggregate(attention::aggregate(f_room, out.attention), out.attention);
      enhanced = ops::concat_channels<T>({twice, f_room});
    } else {
      enhanced = ops::concat_channels<T>({f_room, f_room});
    }
    const Var<T> f1 = ops::relu(conv(enhanced, "room.reduce", 1, 0));
    const Var<T> f2 = ops::relu(conv(feat, "boundary.conv", 1, 1));
    const auto fused = ffa_module(f1, f2, param("ffa.weight"), param("ffa.bias"), config_.fusion);
    const Var<T> room = conv(fused.room, "room.head", 1, 0);
    const Var<T> boundary = conv(fused.boundary, "boundary.head", 1, 0);
    const std::size_t up = config_.stride();
    out.room_logits = ops::upsample_bilinear(room, up);
    out.boundary_logits = ops::upsample_bilinear(boundary, up);
    return out;
  }

  ModelOutput<T> forward_full(const Tensor<T>& image) const {
    Tape<T> tape;
    const auto p = bind(tape);
    return collect(forward(p, tape.constant(image)));
  }

  ModelOutput<T> forward_teacher_offsets(const Tensor<T>& image, const OffsetField& gt_offsets) const {
    Tape<T> tape;
    const auto p = bind(tape);
    return collect(forward(p, tape.constant(image), tape.constant(gt_offsets.as_tensor<T>())));
  }

 private:
  template <typename U>
  friend class Model;

  void add(std::string name, Tensor<T> value, ParamGroup group) {
    params_.add(std::move(name), std::move(value));
    groups_.push_back(group);
  }

  static ModelOutput<T> collect(const ForwardVars<T>& v) {
    return {v.room_logits.value(), v.boundary_logits.value(), OffsetField::from_tensor(v.offsets.value())};
  }

  ModelConfig config_;
  ParamStore<T> params_;
  std::vector<ParamGroup> groups_;
};

/// Per-pixel argmax over the channel axis of [C,H,W] logits (ties to the
/// lower class index).
template <typename T>
LabelMap argmax_labels(const Tensor<T>& logits) {
  if (logits.rank() != 3) throw ShapeError("argmax_labels expects [C,H,W], got " + shape_str(logits.shape()));
  const std::size_t c = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
  LabelMap out(h, w, 0);
  for (std::size_t i = 0; i < h * w; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k)
      if (logits[k * h * w + i] > logits[best * h * w + i]) best = k;
    out.data[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

}  // namespace ogaseg
