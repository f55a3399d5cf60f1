// Acceptance run: one PASS/FAIL line per criterion.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "ogaseg/ogaseg.hpp"

namespace fs = std::filesystem;
using namespace ogaseg;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::string detail;
};

void fail(Outcome& o, const std::string& why) {
  if (o.pass) o.detail = why;
  o.pass = false;
}

Tensor<double> random_tensor(Shape s, Rng& rng, double lo, double hi) {
  Tensor<double> t(std::move(s));
  for (auto& v : t.vec()) v = rng.uniform(lo, hi);
  return t;
}

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  const auto r = run_grad_suite();
  const double secs = seconds_since(t0);
  Outcome o;
  double worst = 0;
  for (const auto& e : r.entries) {
    worst = std::max(worst, e.report.max_rel_error);
    if (!e.passed) fail(o, e.name + " rel err " + std::to_string(e.report.max_rel_error));
  }
  if (!r.passed()) fail(o, "suite empty");
  if (secs >= 120) fail(o, "took " + std::to_string(secs) + " s");
  if (o.pass) {
    std::ostringstream os;
    os << r.entries.size() << " checks, worst rel err " << std::setprecision(3) << worst << ", " << std::fixed
       << std::setprecision(1) << secs << " s";
    o.detail = os.str();
  }
  return o;
}

Outcome attention_invariants() {
  const auto t0 = Clock::now();
  Outcome o;
  const AttentionConfig cfg;
  double worst_row = 0;

  auto check_rows = [&](const Tensor<double>& a, std::size_t n) {
    for (std::size_t i = 0; i < a.size() / n; ++i) {
      double s = 0;
      for (std::size_t k = 0; k < n; ++k) s += a[i * n + k];
      worst_row = std::max(worst_row, std::abs(s - 1.0));
    }
  };

  Rng rng(11);
  for (std::size_t trial = 0; trial < 50; ++trial) {
    const std::size_t h = 1 + trial % 9, w = 1 + (trial * 7) % 11;
    const auto off = OffsetField::from_tensor(random_tensor({2, h, w}, rng, -6, 6));
    check_rows(attention::attention_weights(off, cfg), h + w - 1);
  }

  GenerateOptions two;
  two.min_rooms = two.max_rooms = 2;
  std::size_t pixels = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto rooms = oracle::feature_instances(generate(seed, two));
    const auto a = attention::attention_weights(offset_ground_truth(rooms), cfg);
    check_rows(a, rooms.height() + rooms.width() - 1);
    for (std::size_t y = 0; y < rooms.height(); ++y)
      for (std::size_t x = 0; x < rooms.width(); ++x) {
        if (!rooms.id_at(y, x)) continue;
        ++pixels;
        const auto m = oracle::attention_mass(a, rooms, y, x);
        if (!(m.same > m.cross))
          fail(o, "seed " + std::to_string(seed) + " pixel (" + std::to_string(y) + "," + std::to_string(x) + ")");
      }
  }
  if (worst_row > 1e-6) fail(o, "row sum off by " + std::to_string(worst_row));

  // impulse at every position of a few grids, offsets zero and random
  for (std::size_t trial = 0; trial < 6; ++trial) {
    const std::size_t h = 2 + trial, w = 9 - trial;
    const Tensor<double> offs = trial % 2 ? random_tensor({2, h, w}, rng, -2, 2) : Tensor<double>({2, h, w});
    Tape<double> tape;
    const auto a = attention::attention_map(tape.constant(offs), cfg);
    for (std::size_t py = 0; py < h; ++py)
      for (std::size_t px = 0; px < w; ++px) {
        Tensor<double> f({1, h, w});
        f.at(0, py, px) = 1.0;
        const auto once = attention::aggregate(tape.constant(f), a).value();
        const auto twice = attention::aggregate(tape.constant(once), a).value();
        bool all_once = true, all_twice = true;
        for (std::size_t i = 0; i < h * w; ++i) {
          all_once = all_once && once[i] > 0;
          all_twice = all_twice && twice[i] > 0;
        }
        // one pass only covers the cross when the grid is at least 2x2
        if (all_once && h > 1 && w > 1) fail(o, "impulse covered the grid after one pass");
        if (!all_twice) fail(o, "impulse missed pixels after two passes");
      }
  }
  const double secs = seconds_since(t0);
  if (secs >= 30) fail(o, "took " + std::to_string(secs) + " s");
  if (o.pass) {
    std::ostringstream os;
    os << pixels << " room pixels, max row error " << std::setprecision(2) << worst_row << ", " << std::fixed
       << std::setprecision(2) << secs << " s";
    o.detail = os.str();
  }
  return o;
}

Outcome oracle_equivalence() {
  Outcome o;
  Rng rng(5);
  double worst = 0;
  for (std::size_t h = 1; h <= 4; ++h)
    for (std::size_t w = 1; w <= 4; ++w)
      for (std::size_t rep = 0; rep < 5; ++rep) {
        const auto offs = random_tensor({2, h, w}, rng, -3, 3);
        const auto f = random_tensor({3, h, w}, rng, -1, 1);
        Tape<double> tape;
        const auto a = attention::attention_map(tape.constant(offs), AttentionConfig{});
        const auto got = attention::aggregate(tape.constant(f), a).value();
        const auto want = oracle::dense_apply(oracle::dense_attention(offs), f);
        for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
      }
  if (worst > 1e-10) fail(o, "max abs diff " + std::to_string(worst));
  std::ostringstream os;
  os << "80 grids up to 4x4, max abs diff " << std::setprecision(2) << worst;
  if (o.pass) o.detail = os.str();
  return o;
}

Outcome metric_oracle() {
  Outcome o;
  const auto m = metrics(ConfusionMatrix::from_rows({{3, 1}, {0, 4}}));
  // 0.8 has no exact binary form; compare at the last-bit level
  auto eq = [](double a, double b) { return std::abs(a - b) <= 4 * std::numeric_limits<double>::epsilon(); };
  if (!eq(m.overall_acc, 0.875)) fail(o, "overall " + std::to_string(m.overall_acc));
  if (!(m.class_acc.size() == 2 && m.class_acc[0] && m.class_acc[1] && eq(*m.class_acc[0], 0.75) &&
        eq(*m.class_acc[1], 1.0)))
    fail(o, "class_acc");
  if (!eq(m.mean_iou, 0.775)) fail(o, "mIoU " + std::to_string(m.mean_iou));
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto s = generate(seed, GenerateOptions{});
    if (flood_fill_vote(s.room_labels, s.boundary_labels) != s.room_labels)
      fail(o, "flood fill changed sample " + std::to_string(seed));
  }
  if (o.pass) o.detail = "0.875 / [0.75, 1] / 0.775, flood fill identity on 50 samples";
  return o;
}

bool same_params(const ParamStore<float>& a, const ParamStore<float>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].name != b[i].name || a[i].value != b[i].value) return false;
  return true;
}

struct OverfitRun {
  TrainResult result;
  double secs = 0;
};

OverfitRun overfit_run(const std::vector<FloorPlanSample>& data, const fs::path& dir) {
  fs::remove_all(dir);
  TrainOptions opt;
  opt.out_dir = dir;
  const auto t0 = Clock::now();
  OverfitRun r{train(data, TrainConfig{}, opt), 0};
  r.secs = seconds_since(t0);
  return r;
}

Outcome overfit(const std::vector<FloorPlanSample>& data, const OverfitRun& a, const OverfitRun& b) {
  Outcome o;
  const auto rep = evaluate(a.result.model, data);
  const double acc = metrics(rep.raw.combined).overall_acc;
  const double cons = rep.raw.room_consistency();
  if (acc < 0.95) fail(o, "overall acc " + std::to_string(acc));
  if (cons < 0.9) fail(o, "room consistency " + std::to_string(cons));
  if (!same_params(a.result.model.params(), b.result.model.params())) fail(o, "reruns differ");
  if (a.secs >= 600 || b.secs >= 600) fail(o, "took " + std::to_string(std::max(a.secs, b.secs)) + " s");
  std::ostringstream os;
  os << "acc " << std::fixed << std::setprecision(4) << acc << ", consistency " << cons << ", reruns identical, "
     << std::setprecision(0) << a.secs << " s";
  if (o.pass) o.detail = os.str();
  return o;
}

Outcome freeze_contracts(const OverfitRun& run, const fs::path& dir) {
  Outcome o;
  const auto& model = run.result.model;
  const bool freeze_backbone = TrainConfig{}.stage1_freeze_backbone;
  std::size_t frozen1 = 0, frozen2 = 0;
  // both the in-memory snapshots and the written checkpoints
  ParamStore<float> init = model.params(), stage1 = model.params(), fin = model.params();
  load_checkpoint((dir / "init.ckpt").string(), init);
  load_checkpoint((dir / "stage1.ckpt").string(), stage1);
  load_checkpoint((dir / "final.ckpt").string(), fin);
  if (!same_params(init, run.result.initial)) fail(o, "init.ckpt differs from the initial parameters");
  if (!same_params(stage1, run.result.after_stage1)) fail(o, "stage1.ckpt differs from the stage-1 parameters");
  for (std::size_t i = 0; i < init.size(); ++i) {
    const auto g = model.group(i);
    if (!stage1_trainable(g, freeze_backbone)) {
      ++frozen1;
      if (init[i].value != stage1[i].value) fail(o, init[i].name + " moved in stage 1");
    }
    if (!stage2_trainable(g)) {
      ++frozen2;
      if (stage1[i].value != fin[i].value) fail(o, init[i].name + " moved in stage 2");
    }
  }
  if (frozen1 == 0 || frozen2 == 0) fail(o, "no frozen tensors found");
  if (o.pass)
    o.detail = std::to_string(frozen1) + " tensors fixed in stage 1, " + std::to_string(frozen2) + " in stage 2";
  return o;
}

Outcome round_trip(const OverfitRun& run, const fs::path& dir, const std::vector<FloorPlanSample>& data) {
  Outcome o;
  const fs::path sdir = dir / "samples";
  fs::remove_all(sdir);
  GenerateOptions opt;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    // vary size and room count so the round trip sees a spread of plans
    opt.size = seed % 3 == 0 ? 128 : 64;
    opt.max_rooms = 2 + seed % 5;
    const auto s = generate(5000 + seed, opt);
    const fs::path p = sdir / sample_id(seed);
    save_sample(s, p);
    if (!(load_sample(p) == s)) fail(o, "sample " + std::to_string(seed) + " changed");
  }
  const fs::path ckpt = dir / "overfit_a" / "roundtrip.ckpt";
  save_checkpoint(ckpt.string(), run.result.model.params());
  const auto back = load_model(ckpt);
  for (const auto& s : data) {
    const auto image = image_tensor<float>(s);
    const auto a = run.result.model.forward_full(image);
    const auto b = back.forward_full(image);
    if (a.room_logits != b.room_logits || a.boundary_logits != b.boundary_logits || a.offsets.dy != b.offsets.dy || a.offsets.dx != b.offsets.dx)
      fail(o, "reloaded model output differs");
  }
  if (o.pass) o.detail = "100 samples lossless, reloaded checkpoint bit-identical on " + std::to_string(data.size()) +
                         " forwards";
  return o;
}

// Held-out ablation. The three variants share data, seed and schedule.
struct AblationProtocol {
  std::size_t train_samples = 64;
  std::uint64_t train_seed = 100;
  std::size_t held_samples = 16;
  std::uint64_t held_seed = 1000;
  std::size_t stage2_iters = 3000;
  // class-share weights collapse every variant to background on this set
  WeightMode class_weights = WeightMode::inverse_frequency;
  // without it the backbone drifts away from the frozen offset head
  bool stage2_offset_grad = true;
};

struct VariantScore {
  std::string name;
  double consistency = 0;
  double acc = 0;
  std::string note;
};

VariantScore run_variant(const std::string& name, TrainConfig cfg, const std::vector<FloorPlanSample>& train_set,
                         const std::vector<FloorPlanSample>& held, const fs::path& dir) {
  VariantScore v{name, 0, 0, {}};
  fs::remove_all(dir);
  TrainOptions opt;
  opt.out_dir = dir;
  try {
    const auto res = train(train_set, cfg, opt);
    const auto rep = evaluate(res.model, held);
    v.consistency = rep.raw.room_consistency();
    v.acc = metrics(rep.raw.combined).overall_acc;
  } catch (const TrainingDiverged& e) {
    // no usable model; it scores as predicting nothing
    v.note = "diverged at iteration " + std::to_string(e.iteration());
  }
  return v;
}

Outcome ablation(const fs::path& dir) {
  Outcome o;
  const AblationProtocol p;
  const auto train_set = generate_set(p.train_seed, p.train_samples, GenerateOptions{});
  const auto held = generate_set(p.held_seed, p.held_samples, GenerateOptions{});
  TrainConfig full;
  full.stage2_iters = p.stage2_iters;
  full.class_weights = p.class_weights;
  full.stage2_offset_grad = p.stage2_offset_grad;
  TrainConfig no_oga = full;
  no_oga.model.attention.enabled = false;
  TrainConfig no_softmax = full;
  no_softmax.model.attention.use_softmax = false;
  const auto a = run_variant("full", full, train_set, held, dir / "full");
  const auto b = run_variant("without OGA", no_oga, train_set, held, dir / "no_oga");
  const auto c = run_variant("without softmax", no_softmax, train_set, held, dir / "no_softmax");
  if (a.consistency < b.consistency) fail(o, "below the without-OGA variant");
  if (a.consistency < c.consistency) fail(o, "below the without-softmax variant");
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  for (const auto* v : {&a, &b, &c}) {
    os << (v == &a ? "" : "; ") << v->name << " consistency " << v->consistency << " acc " << v->acc;
    if (!v->note.empty()) os << " (" << v->note << ")";
  }
  o.detail = (o.pass ? "" : o.detail + ": ") + os.str();
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string workdir = "acceptance_work";
  std::vector<int> only;
  app.add_option("--workdir", workdir, "Scratch directory for training runs");
  app.add_option("--only", only, "Run only these criteria, comma separated")->delimiter(',')->check(CLI::Range(1, 8));
  CLI11_PARSE(app, argc, argv);

  const std::set<int> selected(only.begin(), only.end());
  auto want = [&](int i) { return selected.empty() || selected.count(i); };
  const fs::path dir(workdir);
  fs::create_directories(dir);

  bool all = true;
  // ctest hides the output of passing tests, so keep a copy
  std::ofstream log(dir / "report.txt", std::ios::trunc);
  auto report = [&](int i, const std::string& name, const Outcome& o) {
    std::ostringstream line;
    line << (o.pass ? "PASS" : "FAIL") << " " << i << " " << name << ": " << o.detail << '\n';
    std::cout << line.str() << std::flush;
    log << line.str() << std::flush;
    all = all && o.pass;
  };
  auto guarded = [&](int i, const std::string& name, auto&& fn) {
    if (!want(i)) return;
    try {
      report(i, name, fn());
    } catch (const std::exception& e) {
      report(i, name, Outcome{false, std::string("exception: ") + e.what()});
    }
  };

  guarded(1, "gradient suite", gradient_suite);
  guarded(2, "attention invariants", attention_invariants);
  guarded(3, "dense oracle equivalence", oracle_equivalence);
  guarded(4, "metric oracle", metric_oracle);

  if (want(5) || want(7) || want(8)) {
    const auto data = generate_set(TrainConfig{}.seed, 4, GenerateOptions{});
    std::optional<OverfitRun> first, second;
    std::string error;
    try {
      first = overfit_run(data, dir / "overfit_a");
      if (want(5)) second = overfit_run(data, dir / "overfit_b");
    } catch (const std::exception& e) {
      error = std::string("exception: ") + e.what();
    }
    auto with_run = [&](int i, const std::string& name, auto&& fn) {
      if (!want(i)) return;
      if (!first || (i == 5 && !second)) return report(i, name, Outcome{false, error});
      guarded(i, name, fn);
    };
    with_run(5, "overfit run", [&] { return overfit(data, *first, *second); });
    with_run(7, "freeze contracts", [&] { return freeze_contracts(*first, dir / "overfit_a"); });
    with_run(8, "format round trip", [&] { return round_trip(*first, dir, data); });
  }
  guarded(6, "ablation direction", [&] { return ablation(dir / "ablation"); });
  return all ? 0 : 1;
}
