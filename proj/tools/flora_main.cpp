// flora: flower segmentation + mini CNN training pipeline, end to end.
#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include <nlohmann/json.hpp>

#include "flora/dataset.hpp"
#include "flora/error.hpp"
#include "flora/evaluation.hpp"
#include "flora/image_io.hpp"
#include "flora/model.hpp"
#include "flora/segmentation.hpp"
#include "flora/training.hpp"

namespace fs = std::filesystem;

namespace {

std::string percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f%%", fraction * 100.0);
  return buf;
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec && !fs::is_directory(dir))
    throw flora::IoFailure("cannot create directory " + dir.string());
}

bool has_image_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir))
    throw flora::MissingFile("input directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && has_image_extension(entry.path()))
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  return files;
}

std::pair<std::int64_t, std::int64_t> parse_synth_spec(const std::string& spec) {
  const auto comma = spec.find(',');
  try {
    if (comma == std::string::npos) throw std::invalid_argument("");
    std::size_t used_a = 0, used_b = 0;
    const std::string a = spec.substr(0, comma), b = spec.substr(comma + 1);
    const std::int64_t classes = std::stoll(a, &used_a);
    const std::int64_t per_class = std::stoll(b, &used_b);
    if (used_a != a.size() || used_b != b.size()) throw std::invalid_argument("");
    return {classes, per_class};
  } catch (const std::exception&) {
    throw flora::Error("--synthetic expects 'classes,per_class', got '" + spec + "'");
  }
}

struct DataFlags {
  std::string data_dir;
  std::string synthetic;

  void require_one() const {
    if (data_dir.empty() == synthetic.empty())
      throw flora::Error("pass exactly one of --data-dir or --synthetic");
  }

  flora::Dataset load(int image_size, std::uint64_t seed) const {
    require_one();
    if (!synthetic.empty()) {
      const auto [classes, per_class] = parse_synth_spec(synthetic);
      return flora::generate_synthetic_flowers(classes, per_class, image_size, seed);
    }
    const fs::path dir = data_dir;
    return flora::load_dataset(dir, dir / "labels.csv");
  }
};

flora::ModelGraph build_model(const std::string& arch, std::int64_t num_classes,
                              int size, std::uint64_t seed) {
  const std::vector<std::int64_t> input = {3, size, size};
  if (arch == "plain") return flora::build_mini_plainnet(num_classes, input, seed);
  if (arch == "inception")
    return flora::build_mini_inceptionnet(num_classes, input, seed);
  throw flora::Error("unknown --arch '" + arch + "' (use plain or inception)");
}

struct SplitSamples {
  std::vector<flora::Sample> train, val, test;
};

SplitSamples split_and_tensorize(const flora::Dataset& ds, std::uint64_t seed,
                                 int size) {
  const flora::DatasetSplit split = flora::split_dataset(ds, 0.15, 0.15, seed);
  SplitSamples out;
  out.train = flora::to_samples(flora::collect_items(ds, split.train), size);
  out.val = flora::to_samples(flora::collect_items(ds, split.validation), size);
  out.test = flora::to_samples(flora::collect_items(ds, split.test), size);
  return out;
}

// ---- subcommand bodies -------------------------------------------------------

struct SegmentArgs {
  std::string in_dir;
  flora::SegmentationConfig config;
  bool emit_masks = false;
};

int run_segment(const SegmentArgs& args, const fs::path& out_dir, bool quiet) {
  args.config.validate();
  const std::vector<fs::path> files = list_images(args.in_dir);
  if (files.empty())
    throw flora::MissingFile("no .png/.jpg images in " + args.in_dir);
  ensure_dir(out_dir);

  int succeeded = 0;
  for (const fs::path& file : files) {
    try {
      const flora::RgbImage image = flora::load_image(file.string());
      const flora::SegmentationResult result = flora::segment(image, args.config);
      const std::string stem = file.stem().string();
      flora::save_png(out_dir / (stem + ".seg.png"), result.output);
      if (args.emit_masks)
        flora::write_file(out_dir / (stem + ".mask.png"),
                          flora::encode_mask_png(result.mask));
      const double fg = static_cast<double>(result.mask.count()) /
                        static_cast<double>(image.pixel_count());
      if (!quiet)
        std::cout << file.filename().string() << ": " << result.iterations_used
                  << " iterations, foreground " << percent(fg) << "\n";
      ++succeeded;
    } catch (const flora::Error& e) {
      std::cerr << "skipped " << file.string() << ": " << e.what() << "\n";
    }
  }
  if (succeeded == 0) {
    std::cerr << "error: no image in " << args.in_dir << " could be segmented\n";
    return 2;
  }
  return 0;
}

struct SynthArgs {
  std::int64_t classes = 8;
  std::int64_t per_class = 50;
  int size = 32;
};

int run_synth(const SynthArgs& args, const fs::path& out_dir, std::uint64_t seed,
              bool quiet) {
  const flora::Dataset ds =
      flora::generate_synthetic_flowers(args.classes, args.per_class, args.size, seed);
  ensure_dir(out_dir);
  std::string labels = "filename,label,class_name\n";
  for (const auto& item : ds.items) {
    const std::string filename = item.id + ".png";
    flora::save_png(out_dir / filename, item.image);
    labels += filename + "," + std::to_string(item.label) + "," + item.class_name + "\n";
  }
  flora::write_file((out_dir / "labels.csv").string(), labels);
  if (!quiet)
    std::cout << "wrote " << ds.items.size() << " images across " << args.classes
              << " classes to " << out_dir.string() << "\n";
  return 0;
}

struct SplitArgs {
  std::string data_dir;
  std::string manifest_out;
  double val_fraction = 0.15;
  double test_fraction = 0.15;
};

int run_split(const SplitArgs& args, const fs::path& out_dir, std::uint64_t seed,
              bool quiet) {
  const fs::path dir = args.data_dir;
  const flora::Dataset ds = flora::load_dataset(dir, dir / "labels.csv");
  const flora::DatasetSplit split =
      flora::split_dataset(ds, args.val_fraction, args.test_fraction, seed);
  const fs::path manifest = args.manifest_out.empty()
                                ? out_dir / "split.json"
                                : fs::path(args.manifest_out);
  ensure_dir(manifest.parent_path().empty() ? "." : manifest.parent_path());
  flora::write_file(manifest.string(), flora::split_to_json(split));
  if (!quiet)
    std::cout << "train " << split.train.size() << " / val " << split.validation.size()
              << " / test " << split.test.size() << " -> " << manifest.string() << "\n";
  return 0;
}

struct TrainArgs {
  DataFlags data;
  std::string arch = "plain";
  std::int64_t epochs = 100;
  double lr = 0.01;
  std::int64_t batch = 32;
  double dropout = 0.5;
  int size = 32;
  std::string checkpoint_out;
  std::string curve_out;
};

int run_train(const TrainArgs& args, const fs::path& out_dir, std::uint64_t seed,
              bool quiet) {
  flora::TrainConfig config;
  config.base_lr = args.lr;
  config.epochs = args.epochs;
  config.batch_size = args.batch;
  config.dropout_ratio = args.dropout;
  config.seed = seed;
  config.validate();

  const flora::Dataset ds = args.data.load(args.size, seed);
  const SplitSamples samples = split_and_tensorize(ds, seed, args.size);
  flora::ModelGraph model = build_model(args.arch, ds.num_classes(), args.size, seed);

  if (!quiet)
    std::cout << "training arch=" << args.arch << " lr=" << num(config.base_lr)
              << " epochs=" << config.epochs << " batch=" << config.batch_size
              << " dropout=" << num(config.dropout_ratio) << " seed=" << seed << " ("
              << samples.train.size() << " train / " << samples.val.size()
              << " val / " << samples.test.size() << " test)\n";

  flora::EpochCallback progress;
  if (!quiet)
    progress = [&](const flora::EpochRecord& r) {
      char line[256];
      std::snprintf(line, sizeof(line),
                    "epoch %lld/%lld lr %.6f train_loss %.4f train_top1 %.4f "
                    "val_loss %.4f val_top1 %.4f\n",
                    static_cast<long long>(r.epoch + 1),
                    static_cast<long long>(config.epochs), r.lr, r.train_loss,
                    r.train_top1, r.val_loss, r.val_top1);
      std::cout << line << std::flush;
    };

  flora::TrainResult result =
      flora::train(std::move(model), samples.train, samples.val, config, progress);

  ensure_dir(out_dir);
  const fs::path ckpt_path = args.checkpoint_out.empty()
                                 ? out_dir / "model.ckpt"
                                 : fs::path(args.checkpoint_out);
  const fs::path curve_path =
      args.curve_out.empty() ? out_dir / "curve.csv" : fs::path(args.curve_out);
  flora::save_checkpoint(result.model, config, config.epochs, ds.class_names,
                         ckpt_path.string());
  flora::write_curve_csv(result.curve, curve_path.string());

  const flora::EvalReport report = flora::evaluate(result.model, samples.val);
  std::cout << "final val top-1: " << percent(report.top1)
            << "  top-5: " << percent(report.top5) << "\n";
  if (!quiet)
    std::cout << "checkpoint: " << ckpt_path.string()
              << "\ncurve: " << curve_path.string() << "\n";
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  DataFlags data;
  std::string split_side = "test";
  std::string json_out;
};

int run_eval(const EvalArgs& args, bool quiet) {
  const flora::Checkpoint ckpt = flora::load_checkpoint(args.checkpoint);
  const flora::ModelGraph model = flora::model_from_checkpoint(ckpt);
  const int size = static_cast<int>(ckpt.input_shape[1]);

  // the stored training seed regenerates the exact original split
  const flora::Dataset ds = args.data.load(size, ckpt.config.seed);
  if (ds.class_names != ckpt.class_names)
    throw flora::ClassSetMismatch(
        "dataset classes do not match the checkpoint's class list");
  const SplitSamples samples = split_and_tensorize(ds, ckpt.config.seed, size);
  const std::vector<flora::Sample>& side =
      args.split_side == "val" ? samples.val : samples.test;

  const flora::EvalReport report = flora::evaluate(model, side);
  std::cout << "top-1: " << percent(report.top1) << "  top-5: " << percent(report.top5)
            << "\n";
  if (!args.json_out.empty())
    flora::write_file(args.json_out,
                      flora::report_to_json(report, ckpt.arch_id, ckpt.class_names));
  if (!quiet && !args.json_out.empty())
    std::cout << "report: " << args.json_out << "\n";
  return 0;
}

struct PredictArgs {
  std::string checkpoint;
  std::string image;
  bool segment_first = false;
  std::int64_t top = 5;
};

int run_predict(const PredictArgs& args) {
  if (args.top < 1) throw flora::Error("--top must be >= 1");
  const flora::Checkpoint ckpt = flora::load_checkpoint(args.checkpoint);
  const flora::ModelGraph model = flora::model_from_checkpoint(ckpt);
  const int size = static_cast<int>(ckpt.input_shape[1]);

  flora::RgbImage image = flora::load_image(args.image);
  if (args.segment_first) {
    try {
      image = flora::segment(image, flora::SegmentationConfig{}).output;
    } catch (const flora::EmptyForeground& e) {
      std::cerr << "warning: segmentation removed everything (" << e.what()
                << "); predicting on the unsegmented image\n";
    }
  }

  flora::Tensor batch({1, 3, size, size});
  batch.data = flora::preprocess_image(image, size).data;
  const flora::Tensor probs =
      flora::forward(model, batch, flora::DropoutMode::kInference, 0);

  const std::int64_t classes = model.num_classes;
  std::vector<std::int64_t> order(static_cast<std::size_t>(classes));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
    if (probs.data[a] != probs.data[b]) return probs.data[a] > probs.data[b];
    return a < b;
  });

  std::cout << "Predictions\n";
  const std::int64_t k = std::min<std::int64_t>(args.top, classes);
  for (std::int64_t i = 0; i < k; ++i) {
    const std::int64_t c = order[static_cast<std::size_t>(i)];
    std::cout << ckpt.class_names[static_cast<std::size_t>(c)] << "\t"
              << percent(probs.data[c]) << "\n";
  }
  return 0;
}

struct CompareArgs {
  std::string checkpoint_a;
  std::string checkpoint_b;
  DataFlags data;
  std::string json_out;
};

int run_compare(const CompareArgs& args, bool quiet) {
  const flora::Checkpoint ckpt_a = flora::load_checkpoint(args.checkpoint_a);
  const flora::Checkpoint ckpt_b = flora::load_checkpoint(args.checkpoint_b);
  if (ckpt_a.class_names != ckpt_b.class_names)
    throw flora::ClassSetMismatch("checkpoints were trained on different class sets");
  if (ckpt_a.input_shape != ckpt_b.input_shape)
    throw flora::Error("checkpoints expect different input sizes");
  if (ckpt_a.config.seed != ckpt_b.config.seed)
    std::cerr << "warning: checkpoints carry different data seeds; using the first\n";

  const flora::ModelGraph model_a = flora::model_from_checkpoint(ckpt_a);
  const flora::ModelGraph model_b = flora::model_from_checkpoint(ckpt_b);
  const int size = static_cast<int>(ckpt_a.input_shape[1]);
  const flora::Dataset ds = args.data.load(size, ckpt_a.config.seed);
  if (ds.class_names != ckpt_a.class_names)
    throw flora::ClassSetMismatch(
        "dataset classes do not match the checkpoints' class list");
  const SplitSamples samples = split_and_tensorize(ds, ckpt_a.config.seed, size);

  flora::ComparisonReport cmp =
      flora::compare_models(model_a, model_b, samples.test);
  cmp.name_a = "a:" + ckpt_a.arch_id;
  cmp.name_b = "b:" + ckpt_b.arch_id;

  char line[160];
  std::snprintf(line, sizeof(line), "%-14s %8s %8s %10s\n", "model", "top-1", "top-5",
                "params");
  std::cout << line;
  std::snprintf(line, sizeof(line), "%-14s %8s %8s %10lld\n", cmp.name_a.c_str(),
                percent(cmp.report_a.top1).c_str(), percent(cmp.report_a.top5).c_str(),
                static_cast<long long>(cmp.param_count_a));
  std::cout << line;
  std::snprintf(line, sizeof(line), "%-14s %8s %8s %10lld\n", cmp.name_b.c_str(),
                percent(cmp.report_b.top1).c_str(), percent(cmp.report_b.top5).c_str(),
                static_cast<long long>(cmp.param_count_b));
  std::cout << line;

  if (!quiet) {
    for (const auto& [name, report] :
         {std::pair{cmp.name_a, &cmp.report_a}, std::pair{cmp.name_b, &cmp.report_b}}) {
      const auto pairs = flora::most_confused_pairs(*report, ds.class_names, 3);
      std::cout << "most confused (" << name << "):";
      if (pairs.empty()) std::cout << " none";
      for (const auto& p : pairs)
        std::cout << " " << p.true_name << "->" << p.predicted_name << " x" << p.count
                  << ";";
      std::cout << "\n";
    }
  }

  if (!args.json_out.empty()) {
    nlohmann::json j;
    j["a"] = nlohmann::json::parse(
        flora::report_to_json(cmp.report_a, ckpt_a.arch_id, ds.class_names));
    j["b"] = nlohmann::json::parse(
        flora::report_to_json(cmp.report_b, ckpt_b.arch_id, ds.class_names));
    j["params"] = {{"a", cmp.param_count_a}, {"b", cmp.param_count_b}};
    j["per_class_delta"] = cmp.per_class_delta;
    j["fixed_by_a"] = cmp.fixed_by_a;
    j["fixed_by_b"] = cmp.fixed_by_b;
    flora::write_file(args.json_out, j.dump(2) + "\n");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flower segmentation and mini CNN classification pipeline"};
  app.require_subcommand(1);

  std::uint64_t seed = 42;
  std::string out_dir = ".";
  bool quiet = false;
  app.add_option("--seed", seed, "seed for splits, init, and training")
      ->capture_default_str();
  app.add_option("--out-dir", out_dir, "directory for generated files")
      ->capture_default_str();
  app.add_flag("--quiet", quiet, "suppress progress output");

  SegmentArgs seg;
  CLI::App* seg_cmd =
      app.add_subcommand("segment", "remove backgrounds from a directory of images");
  seg_cmd->fallthrough();
  seg_cmd->add_option("--in-dir", seg.in_dir, "directory of PNG/JPEG inputs")
      ->required();
  seg_cmd->add_option("--bins", seg.config.bin_count, "hue histogram bins")
      ->capture_default_str();
  seg_cmd->add_option("--border", seg.config.border_band_fraction,
                      "border band fraction seeding the background")
      ->capture_default_str();
  seg_cmd->add_option("--sat-floor", seg.config.saturation_floor,
                      "saturation below which pixels count as achromatic")
      ->capture_default_str();
  seg_cmd->add_option("--stop", seg.config.background_stop_fraction,
                      "stop once this fraction of pixels is background")
      ->capture_default_str();
  seg_cmd->add_option("--max-iters", seg.config.max_iterations,
                      "maximum removal iterations")
      ->capture_default_str();
  seg_cmd->add_flag("--emit-masks", seg.emit_masks, "also write <stem>.mask.png");

  SynthArgs synth;
  CLI::App* synth_cmd =
      app.add_subcommand("synth", "generate a synthetic flower dataset");
  synth_cmd->fallthrough();
  synth_cmd->add_option("--classes", synth.classes, "number of classes (2-24)")
      ->capture_default_str();
  synth_cmd->add_option("--per-class", synth.per_class, "images per class")
      ->capture_default_str();
  synth_cmd->add_option("--size", synth.size, "image side in pixels")
      ->capture_default_str();

  SplitArgs split_args;
  CLI::App* split_cmd =
      app.add_subcommand("split", "write a train/val/test manifest for a dataset");
  split_cmd->fallthrough();
  split_cmd->add_option("--data-dir", split_args.data_dir,
                        "directory with images and labels.csv")
      ->required();
  split_cmd->add_option("--manifest-out", split_args.manifest_out,
                        "manifest path (default <out-dir>/split.json)");
  split_cmd->add_option("--val-fraction", split_args.val_fraction, "validation share")
      ->capture_default_str();
  split_cmd->add_option("--test-fraction", split_args.test_fraction, "test share")
      ->capture_default_str();

  TrainArgs train_args;
  CLI::App* train_cmd = app.add_subcommand("train", "train a model on a dataset");
  train_cmd->fallthrough();
  train_cmd->add_option("--data-dir", train_args.data.data_dir,
                        "directory with images and labels.csv");
  train_cmd->add_option("--synthetic", train_args.data.synthetic,
                        "generate data instead: 'classes,per_class'");
  train_cmd->add_option("--arch", train_args.arch, "plain | inception")
      ->capture_default_str()
      ->check(CLI::IsMember({"plain", "inception"}));
  train_cmd->add_option("--epochs", train_args.epochs, "training epochs")
      ->capture_default_str();
  train_cmd->add_option("--lr", train_args.lr, "base learning rate")
      ->capture_default_str();
  train_cmd->add_option("--batch", train_args.batch, "batch size")
      ->capture_default_str();
  train_cmd->add_option("--dropout", train_args.dropout, "dropout ratio")
      ->capture_default_str();
  train_cmd->add_option("--size", train_args.size, "model input side in pixels")
      ->capture_default_str();
  train_cmd->add_option("--checkpoint-out", train_args.checkpoint_out,
                        "checkpoint path (default <out-dir>/model.ckpt)");
  train_cmd->add_option("--curve-out", train_args.curve_out,
                        "curve CSV path (default <out-dir>/curve.csv)");

  EvalArgs eval_args;
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  eval_cmd->fallthrough();
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "checkpoint file")
      ->required();
  eval_cmd->add_option("--data-dir", eval_args.data.data_dir,
                       "directory with images and labels.csv");
  eval_cmd->add_option("--synthetic", eval_args.data.synthetic,
                       "regenerate data instead: 'classes,per_class'");
  eval_cmd->add_option("--split", eval_args.split_side, "test | val")
      ->capture_default_str()
      ->check(CLI::IsMember({"test", "val"}));
  eval_cmd->add_option("--json-out", eval_args.json_out, "write the report as JSON");

  PredictArgs predict_args;
  CLI::App* predict_cmd =
      app.add_subcommand("predict", "classify a single image with a checkpoint");
  predict_cmd->fallthrough();
  predict_cmd->add_option("--checkpoint", predict_args.checkpoint, "checkpoint file")
      ->required();
  predict_cmd->add_option("--image", predict_args.image, "image to classify")
      ->required();
  predict_cmd->add_flag("--segment-first", predict_args.segment_first,
                        "remove the background before classifying");
  predict_cmd->add_option("--top", predict_args.top, "how many classes to print")
      ->capture_default_str();

  CompareArgs compare_args;
  CLI::App* compare_cmd =
      app.add_subcommand("compare", "evaluate two checkpoints on the same test split");
  compare_cmd->fallthrough();
  compare_cmd->add_option("--checkpoint-a", compare_args.checkpoint_a, "first checkpoint")
      ->required();
  compare_cmd->add_option("--checkpoint-b", compare_args.checkpoint_b,
                          "second checkpoint")
      ->required();
  compare_cmd->add_option("--data-dir", compare_args.data.data_dir,
                          "directory with images and labels.csv");
  compare_cmd->add_option("--synthetic", compare_args.data.synthetic,
                          "regenerate data instead: 'classes,per_class'");
  compare_cmd->add_option("--json-out", compare_args.json_out,
                          "write the comparison as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (seg_cmd->parsed()) return run_segment(seg, out_dir, quiet);
    if (synth_cmd->parsed()) return run_synth(synth, out_dir, seed, quiet);
    if (split_cmd->parsed()) return run_split(split_args, out_dir, seed, quiet);
    if (train_cmd->parsed()) return run_train(train_args, out_dir, seed, quiet);
    if (eval_cmd->parsed()) return run_eval(eval_args, quiet);
    if (predict_cmd->parsed()) return run_predict(predict_args);
    if (compare_cmd->parsed()) return run_compare(compare_args, quiet);
  } catch (const flora::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
