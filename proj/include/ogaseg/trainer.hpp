#pragma once

// Two-stage training. Stage 1 fits the offset head (and, unless
// `stage1_freeze_backbone`, the backbone) to the offset loss. Stage 2 freezes
// the offset head and fits everything else to the room and boundary
// cross-entropies; the offset loss is still computed and logged, and only
// carries gradient with `stage2_offset_grad`.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ogaseg/checkpoint.hpp"
#include "ogaseg/losses.hpp"
#include "ogaseg/network.hpp"
#include "ogaseg/optimizer.hpp"
#include "ogaseg/synth.hpp"

namespace ogaseg {

struct TrainConfig {
  SgdConfig sgd;
  std::size_t stage1_iters = 300;
  std::size_t stage2_iters = 700;
  std::size_t batch_size = 4;
  std::uint64_t seed = 7;
  WeightMode class_weights = WeightMode::paper_literal;
  bool stage1_freeze_backbone = false;
  // Stage 2 logs the offset loss only. When true it keeps shaping the
  // backbone (the offset head stays frozen either way).
  bool stage2_offset_grad = false;
  std::size_t checkpoint_every = 0;  // 0: only init, stage-1 end and final
  ModelConfig model;

  void validate() const {
    if (!(sgd.lr >= 0) || !(sgd.weight_decay >= 0)) throw ConfigError("lr and weight_decay must be non-negative");
    if (!(sgd.momentum >= 0 && sgd.momentum < 1)) throw ConfigError("momentum must lie in [0, 1)");
    if (stage1_iters == 0 || stage2_iters == 0) throw ConfigError("stage1_iters and stage2_iters must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    model.validate();
  }

  KeyValues to_key_values() const {
    KeyValues kv = model.to_key_values();
    std::ostringstream lr, mu, wd;
    lr << std::setprecision(17) << sgd.lr;
    mu << std::setprecision(17) << sgd.momentum;
    wd << std::setprecision(17) << sgd.weight_decay;
    kv["lr"] = lr.str();
    kv["momentum"] = mu.str();
    kv["weight_decay"] = wd.str();
    kv["stage1_iters"] = std::to_string(stage1_iters);
    kv["stage2_iters"] = std::to_string(stage2_iters);
    kv["batch_size"] = std::to_string(batch_size);
    kv["seed"] = std::to_string(seed);
    kv["class_weights"] = to_string(class_weights);
    kv["stage1_freeze_backbone"] = stage1_freeze_backbone ? "1" : "0";
    kv["stage2_offset_grad"] = stage2_offset_grad ? "1" : "0";
    kv["checkpoint_every"] = std::to_string(checkpoint_every);
    return kv;
  }

  static TrainConfig from_key_values(const KeyValues& values) {
    static const std::set<std::string> train_keys{"lr",         "momentum",      "weight_decay",
                                                  "stage1_iters", "stage2_iters", "batch_size",
                                                  "seed",       "class_weights", "stage1_freeze_backbone",
                                                  "stage2_offset_grad", "checkpoint_every"};
    const KeyValues model_keys = ModelConfig{}.to_key_values();
    for (const auto& [k, v] : values) {
      if (!train_keys.count(k) && !model_keys.count(k)) throw ConfigError("unknown config key '" + k + "'");
    }
    TrainConfig c;
    c.model = ModelConfig::from_key_values(values);
    auto get = [&](const char* k) -> const std::string* {
      auto it = values.find(k);
      return it == values.end() ? nullptr : &it->second;
    };
    if (auto v = get("lr")) c.sgd.lr = kv::to_double("lr", *v);
    if (auto v = get("momentum")) c.sgd.momentum = kv::to_double("momentum", *v);
    if (auto v = get("weight_decay")) c.sgd.weight_decay = kv::to_double("weight_decay", *v);
    if (auto v = get("stage1_iters")) c.stage1_iters = kv::to_size("stage1_iters", *v);
    if (auto v = get("stage2_iters")) c.stage2_iters = kv::to_size("stage2_iters", *v);
    if (auto v = get("batch_size")) c.batch_size = kv::to_size("batch_size", *v);
    if (auto v = get("seed")) c.seed = kv::to_size("seed", *v);
    if (auto v = get("class_weights")) c.class_weights = weight_mode_from_string(*v);
    if (auto v = get("stage1_freeze_backbone")) c.stage1_freeze_backbone = kv::to_bool("stage1_freeze_backbone", *v);
    if (auto v = get("stage2_offset_grad")) c.stage2_offset_grad = kv::to_bool("stage2_offset_grad", *v);
    if (auto v = get("checkpoint_every")) c.checkpoint_every = kv::to_size("checkpoint_every", *v);
    c.validate();
    return c;
  }
};

struct LossRecord {
  std::size_t iteration = 0;  // 1-based, counted across both stages
  int stage = 1;
  double room = 0;      // room-branch weighted CE
  double boundary = 0;  // boundary-branch weighted CE
  double offset = 0;    // offset L1
  double total = 0;     // room + boundary + offset
};

class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(const std::string& what, std::size_t iteration, std::string checkpoint)
      : NumericError(what), iteration_(iteration), checkpoint_(std::move(checkpoint)) {}
  std::size_t iteration() const { return iteration_; }
  /// Parameters at the failing iteration, or empty when no output directory.
  const std::string& checkpoint() const { return checkpoint_; }

 private:
  std::size_t iteration_;
  std::string checkpoint_;
};

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: keep everything in memory
  std::ostream* progress = nullptr;
  std::size_t progress_every = 50;
  std::function<void(const LossRecord&)> on_iteration;
};

struct TrainResult {
  Model<float> model;
  ParamStore<float> initial;       // before stage 1
  ParamStore<float> after_stage1;  // between the stages
  std::vector<LossRecord> log;
};

/// One training sample with targets at the resolutions the losses need.
struct TrainExample {
  Tensor<float> image;
  LabelMap rooms;
  LabelMap bounds;
  OffsetField offsets;  // feature resolution
};

inline TrainExample make_example(const FloorPlanSample& s, std::size_t stride) {
  return {image_tensor<float>(s), s.room_labels, s.boundary_labels,
          offset_ground_truth(downsample_instances(s.instances.ids(), stride))};
}

inline bool stage1_trainable(ParamGroup g, bool freeze_backbone) {
  return g == ParamGroup::offset_head || (g == ParamGroup::backbone && !freeze_backbone);
}

inline bool stage2_trainable(ParamGroup g) { return g != ParamGroup::offset_head; }

inline void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& log) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw FormatError("cannot write " + path.string());
  os << "iteration,L_s_room,L_s_boundary,L_o,total\n" << std::setprecision(9);
  for (const auto& r : log) os << r.iteration << ',' << r.room << ',' << r.boundary << ',' << r.offset << ',' << r.total << '\n';
}

inline TrainResult train(const std::vector<FloorPlanSample>& data, const TrainConfig& cfg,
                         const TrainOptions& opts = {}) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("train: dataset is empty");
  namespace fs = std::filesystem;
  const std::size_t stride = cfg.model.stride();
  std::vector<TrainExample> examples;
  for (const auto& s : data) {
    if (s.height % stride || s.width % stride) {
      throw ShapeError("train: sample size " + std::to_string(s.height) + "x" + std::to_string(s.width) +
                       " is not a multiple of the model stride");
    }
    examples.push_back(make_example(s, stride));
  }
  std::vector<const LabelMap*> rooms, bounds;
  for (const auto& e : examples) {
    rooms.push_back(&e.rooms);
    bounds.push_back(&e.bounds);
  }
  const ClassWeights room_w = ClassWeights::from_labels(rooms, cfg.model.num_room_classes, cfg.class_weights);
  const ClassWeights bound_w = ClassWeights::from_labels(bounds, cfg.model.num_boundary_classes, cfg.class_weights);

  TrainResult res{Model<float>::build(cfg.model, cfg.seed), {}, {}, {}};
  Model<float>& model = res.model;
  res.initial = model.params();
  const bool write = !opts.out_dir.empty();
  if (write) {
    fs::create_directories(opts.out_dir);
    write_key_values((opts.out_dir / "config.txt").string(), cfg.to_key_values());
    save_checkpoint((opts.out_dir / "init.ckpt").string(), model.params());
  }

  // Batches walk a fresh permutation of the dataset each epoch.
  Rng order_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(examples.size());
  std::size_t cursor = order.size();
  auto next_index = [&]() {
    if (cursor == order.size()) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[static_cast<std::size_t>(order_rng.integer(0, static_cast<long>(i) - 1))]);
      }
      cursor = 0;
    }
    return order[cursor++];
  };

  const std::size_t total_iters = cfg.stage1_iters + cfg.stage2_iters;
  SgdState<float> state;
  for (std::size_t it = 1; it <= total_iters; ++it) {
    const int stage = it <= cfg.stage1_iters ? 1 : 2;
    if (stage == 2 && it == cfg.stage1_iters + 1) {
      res.after_stage1 = model.params();
      state = {};  // momentum does not carry across stages
      if (write) save_checkpoint((opts.out_dir / "stage1.ckpt").string(), model.params());
    }
    std::vector<char> trainable(model.params().size());
    for (std::size_t i = 0; i < trainable.size(); ++i) {
      trainable[i] = stage == 1 ? stage1_trainable(model.group(i), cfg.stage1_freeze_backbone)
                                : stage2_trainable(model.group(i));
    }
    std::vector<Tensor<float>> acc;
    for (const auto& p : model.params()) acc.emplace_back(p.value.shape(), 0.0f);
    LossRecord rec;
    rec.iteration = it;
    rec.stage = stage;
    const float inv_b = 1.0f / static_cast<float>(cfg.batch_size);
    auto diverged = [&](const std::string& why) {
      std::string ckpt;
      if (write) {
        ckpt = (opts.out_dir / "diverged.ckpt").string();
        save_checkpoint(ckpt, model.params());
        write_loss_csv(opts.out_dir / "loss.csv", res.log);
      }
      return TrainingDiverged("training diverged at iteration " + std::to_string(it) + " (stage " +
                                  std::to_string(stage) + "): " + why,
                              it, ckpt);
    };
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const TrainExample& ex = examples[next_index()];
      Tape<float> tape;
      const auto vars = model.bind(tape, [&](std::size_t i) { return trainable[i] != 0; });
      double l_room = 0, l_bound = 0, l_off = 0;
      try {
        const auto out = model.forward(vars, tape.constant(ex.image));
        const Var<float> ls_room = weighted_ce(out.room_logits, ex.rooms, room_w);
        const Var<float> ls_bound = weighted_ce(out.boundary_logits, ex.bounds, bound_w);
        const bool offset_grad = stage == 1 || cfg.stage2_offset_grad;
        const Var<float> lo = offset_l1(offset_grad ? out.offsets : ops::detach(out.offsets), ex.offsets);
        l_room = ls_room.value().item();
        l_bound = ls_bound.value().item();
        l_off = lo.value().item();
        if (!std::isfinite(l_room) || !std::isfinite(l_bound) || !std::isfinite(l_off)) {
          throw NumericError("non-finite loss");
        }
        if (stage == 1) tape.backward(lo);
        else tape.backward(total_loss(ops::add(ls_room, ls_bound), offset_grad ? lo : ops::detach(lo)));
      } catch (const TrainingDiverged&) {
        throw;
      } catch (const NumericError& e) {
        throw diverged(e.what());
      }
      for (std::size_t i = 0; i < vars.size(); ++i) {
        if (!trainable[i]) continue;
        const Tensor<float> g = tape.grad(vars[i]);
        ops::detail::axpy(inv_b, g.data().data(), acc[i].data().data(), g.size());
      }
      rec.room += l_room / static_cast<double>(cfg.batch_size);
      rec.boundary += l_bound / static_cast<double>(cfg.batch_size);
      rec.offset += l_off / static_cast<double>(cfg.batch_size);
    }
    rec.total = rec.room + rec.boundary + rec.offset;
    std::vector<const Tensor<float>*> grads(acc.size(), nullptr);
    for (std::size_t i = 0; i < acc.size(); ++i) {
      if (!trainable[i]) continue;
      if (!acc[i].all_finite()) throw diverged("non-finite gradient for " + model.params()[i].name);
      grads[i] = &acc[i];
    }
    sgd_nesterov_step(model.params(), grads, state, cfg.sgd);
    for (std::size_t i = 0; i < acc.size(); ++i) {
      if (trainable[i] && !model.params()[i].value.all_finite()) {
        throw diverged("non-finite parameter " + model.params()[i].name);
      }
    }
    res.log.push_back(rec);
    if (opts.on_iteration) opts.on_iteration(rec);
    if (opts.progress && (it % std::max<std::size_t>(opts.progress_every, 1) == 0 || it == total_iters)) {
      *opts.progress << "iter " << it << "/" << total_iters << " stage " << stage << "  L_s_room " << rec.room
                     << "  L_s_boundary " << rec.boundary << "  L_o " << rec.offset << '\n';
    }
    if (write && cfg.checkpoint_every && it % cfg.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "iter_%06zu.ckpt", it);
      save_checkpoint((opts.out_dir / name).string(), model.params());
    }
  }
  if (write) {
    save_checkpoint((opts.out_dir / "final.ckpt").string(), model.params());
    write_loss_csv(opts.out_dir / "loss.csv", res.log);
  }
  return res;
}

/// Rebuilds a model from a checkpoint and the `config.txt` stored next to it.
inline Model<float> load_model(const std::filesystem::path& ckpt) {
  const auto cfg_path = ckpt.parent_path() / "config.txt";
  if (!std::filesystem::exists(cfg_path)) throw FormatError("missing " + cfg_path.string() + " next to checkpoint");
  const TrainConfig cfg = TrainConfig::from_key_values(read_key_values(cfg_path.string()));
  Model<float> m = Model<float>::build(cfg.model, 0);
  load_checkpoint(ckpt.string(), m.params());
  return m;
}

}  // namespace ogaseg
