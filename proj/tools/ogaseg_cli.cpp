// Command-line front end: dataset generation, training, evaluation, inference,
// attention dumps and the gradient-check suite.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "ogaseg/ogaseg.hpp"

namespace fs = std::filesystem;
using namespace ogaseg;

namespace {

// A directory holding manifest.txt is used as is; otherwise `<root>/<split>`.
fs::path split_dir(const fs::path& data, const std::string& split) {
  if (fs::exists(data / "manifest.txt")) return data;
  return data / split;
}

Tensor<float> read_image(const std::string& path) {
  const png::Image img = png::read(path);
  if (img.channels != 3 || img.bit_depth != 8) throw FormatError(path + ": expected an 8-bit RGB image");
  std::vector<std::uint8_t> rgb(img.samples.begin(), img.samples.end());
  return image_tensor<float>(rgb, img.height, img.width);
}

void check_input_size(const Model<float>& model, const Tensor<float>& image, const std::string& path) {
  const std::size_t s = model.config().stride();
  if (image.dim(1) % s || image.dim(2) % s) {
    throw ShapeError(path + ": image size " + std::to_string(image.dim(2)) + "x" + std::to_string(image.dim(1)) +
                     " is not a multiple of " + std::to_string(s));
  }
}

int gen_data(std::uint64_t seed, std::size_t count, std::size_t size, std::size_t min_rooms, std::size_t max_rooms,
             const fs::path& out, const std::string& split) {
  GenerateOptions opt;
  opt.size = size;
  opt.min_rooms = min_rooms;
  opt.max_rooms = max_rooms;
  save_split(out / split, generate_set(seed, count, opt));
  std::cout << "wrote " << count << " samples to " << (out / split).string() << '\n';
  return 0;
}

int train_cmd(const fs::path& data, const std::string& split, const fs::path& out, const std::string& config_path,
              const std::vector<std::string>& overrides, bool freeze_backbone) {
  KeyValues kv;
  if (!config_path.empty()) kv = read_key_values(config_path);
  for (const auto& o : overrides) {
    std::istringstream is(o);
    for (const auto& [k, v] : parse_key_values(is, "--set")) kv[k] = v;
  }
  if (freeze_backbone) kv["stage1_freeze_backbone"] = "1";
  const TrainConfig cfg = TrainConfig::from_key_values(kv);
  const auto samples = load_split(split_dir(data, split));
  TrainOptions opts;
  opts.out_dir = out;
  opts.progress = &std::cout;
  train(samples, cfg, opts);
  std::cout << "checkpoints and loss.csv written to " << out.string() << '\n';
  return 0;
}

int eval_cmd(const fs::path& data, const std::string& split, const std::string& ckpt, bool flood_fill,
             bool ground_truth, const std::string& report_path) {
  const auto samples = load_split(split_dir(data, split));
  EvalOptions opt;
  opt.flood_fill = flood_fill;
  opt.ground_truth = ground_truth;
  EvalReport report;
  if (ground_truth) {
    report = evaluate<float>(nullptr, samples, opt);
  } else {
    if (ckpt.empty()) throw ConfigError("eval needs --ckpt unless --ground-truth is given");
    const Model<float> model = load_model(ckpt);
    report = evaluate(model, samples, opt);
  }
  std::cout << report_table(report);
  if (!report_path.empty()) write_key_values(report_path, report_key_values(report));
  return 0;
}

int infer_cmd(const std::string& image_path, const std::string& ckpt, const fs::path& out) {
  const Model<float> model = load_model(ckpt);
  const Tensor<float> image = read_image(image_path);
  check_input_size(model, image, image_path);
  const Prediction p = predict(model, image);
  fs::create_directories(out);
  LabelMap rooms = p.rooms;
  for (auto& v : rooms.data) v = room_to_palette(v);
  png::write_indexed((out / "rooms.png").string(), rooms);
  png::write_indexed((out / "bounds.png").string(), p.bounds);
  std::cout << "wrote " << (out / "rooms.png").string() << " and " << (out / "bounds.png").string() << '\n';
  return 0;
}

// Attention row of the feature cell under image pixel (y, x), scattered onto
// the feature grid, scaled so the largest weight is 255 and enlarged to image
// size with nearest-neighbour sampling.
int dump_attention_cmd(const std::string& image_path, const std::string& ckpt, const std::string& pixel,
                       const std::string& out) {
  const Model<float> model = load_model(ckpt);
  if (!model.config().attention.enabled) throw ConfigError("model was trained without offset-guided attention");
  const Tensor<float> image = read_image(image_path);
  check_input_size(model, image, image_path);
  const auto yx = kv::to_size_list("--pixel", pixel);
  if (yx.size() != 2) throw ConfigError("--pixel expects y,x");
  const std::size_t H = image.dim(1), W = image.dim(2), s = model.config().stride();
  if (yx[0] >= H || yx[1] >= W) throw ConfigError("--pixel lies outside the image");
  Tape<float> tape;
  const auto vars = model.bind(tape);
  const auto fv = model.forward(vars, tape.constant(image));
  const Tensor<float>& a = fv.attention.value();
  const CrissCross cc{H / s, W / s};
  const std::size_t fy = yx[0] / s, fx = yx[1] / s;
  std::vector<double> cell(cc.height * cc.width, 0.0);
  double peak = 0;
  for (std::size_t k = 0; k < cc.count(); ++k) {
    const double w = std::abs(a[(fy * cc.width + fx) * cc.count() + k]);
    cell[cc.neighbor_index(fy, fx, k)] = w;
    peak = std::max(peak, w);
  }
  Grid<std::uint8_t> g(H, W, 0);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const double v = peak > 0 ? cell[(y / s) * cc.width + x / s] / peak : 0.0;
      g.at(y, x) = static_cast<std::uint8_t>(std::lround(255.0 * v));
    }
  png::write_gray8(out, g);
  std::cout << "wrote " << out << '\n';
  return 0;
}

int grad_check_cmd() {
  const GradSuiteResult r = run_grad_suite(&std::cout);
  std::cout << (r.passed() ? "all gradient checks passed" : "gradient checks FAILED") << '\n';
  return r.passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Floor-plan segmentation with offset-guided attention"};
  app.require_subcommand(1);

  std::uint64_t seed = 7;
  std::size_t count = 1, size = 64, min_rooms = 2, max_rooms = 4;
  std::string out, split = "train";
  auto* gen = app.add_subcommand("gen-data", "Generate synthetic floor plans");
  gen->add_option("--seed", seed, "First sample seed (sample i uses seed + i)");
  gen->add_option("--count", count, "Number of samples")->check(CLI::PositiveNumber);
  gen->add_option("--size", size, "Image side in pixels, a multiple of 8");
  gen->add_option("--min-rooms", min_rooms, "Minimum rooms per plan");
  gen->add_option("--max-rooms", max_rooms, "Maximum rooms per plan");
  gen->add_option("--out", out, "Dataset root")->required();
  gen->add_option("--split", split, "Split name");

  std::string data, config, ckpt;
  std::vector<std::string> overrides;
  bool freeze_backbone = false;
  auto* tr = app.add_subcommand("train", "Two-stage training");
  tr->add_option("--data", data, "Dataset root or split directory")->required();
  tr->add_option("--split", split, "Split name under the dataset root");
  tr->add_option("--out", out, "Output directory for checkpoints and logs")->required();
  tr->add_option("--config", config, "key=value config file");
  tr->add_option("--set", overrides, "Override one config key (key=value), repeatable");
  tr->add_flag("--stage1-freeze-backbone", freeze_backbone, "Train only the offset head in stage 1");

  bool flood_fill = false, ground_truth = false;
  std::string report;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  ev->add_option("--data", data, "Dataset root or split directory")->required();
  ev->add_option("--split", split, "Split name under the dataset root");
  ev->add_option("--ckpt", ckpt, "Checkpoint file (config.txt must sit beside it)");
  ev->add_flag("--flood-fill", flood_fill, "Also report flood-fill post-processed results");
  ev->add_flag("--ground-truth", ground_truth, "Score the ground truth against itself");
  ev->add_option("--report", report, "Also write the metrics as key=value to this file");

  std::string image;
  auto* inf = app.add_subcommand("infer", "Predict room and boundary maps for one image");
  inf->add_option("--image", image, "RGB PNG")->required();
  inf->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  inf->add_option("--out", out, "Output directory")->required();

  std::string pixel;
  auto* dump = app.add_subcommand("dump-attention", "Write one pixel's attention row as a grayscale PNG");
  dump->add_option("--image", image, "RGB PNG")->required();
  dump->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  dump->add_option("--pixel", pixel, "Image pixel as y,x")->required();
  dump->add_option("--out", out, "Output PNG")->required();

  auto* gc = app.add_subcommand("grad-check", "Run the finite-difference gradient suite");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return gen_data(seed, count, size, min_rooms, max_rooms, out, split);
    if (*tr) return train_cmd(data, split, out, config, overrides, freeze_backbone);
    if (*ev) return eval_cmd(data, split, ckpt, flood_fill, ground_truth, report);
    if (*inf) return infer_cmd(image, ckpt, out);
    if (*dump) return dump_attention_cmd(image, ckpt, pixel, out);
    if (*gc) return grad_check_cmd();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
