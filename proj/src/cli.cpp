#include "fss/cli.hpp"

#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <set>

#include <CLI11.hpp>
#include <opencv2/imgproc.hpp>

#include "fss/error.hpp"
#include "fss/metrics.hpp"

namespace fss::cli {

namespace fs = std::filesystem;

TrainConfig resolve_train_config(Task task, const TrainOverrides& o, std::vector<std::string>* warnings) {
  TrainConfig config = default_config(task);
  if (o.config_file) config = load_config(*o.config_file, config);
  if (config.task != task) throw ConfigError("config file is for task " + to_string(config.task));
  if (o.no_multi_patch) config.ablation.use_multi_patch = false;
  if (o.no_style) {
    if (task == Task::s2i && warnings != nullptr) {
      warnings->push_back("--no-style has no effect for s2i; style conditioning is already excluded");
    }
    config.ablation.use_style_vector = false;
  }
  if (o.seed) config.seed = *o.seed;
  config.validate();
  return config;
}

namespace {

struct DetectorFlags {
  std::string regions;
  std::string cascade;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--regions", regions, "JSON fixture with per-image key-region boxes");
    cmd->add_option("--cascade", cascade, "OpenCV face cascade used to place key regions");
  }

  std::unique_ptr<LandmarkDetector> make(const RegionConfig& config) const {
    if (!regions.empty() && !cascade.empty()) throw ConfigError("--regions and --cascade are mutually exclusive");
    DetectorSettings settings;
    settings.config = config;
    if (!regions.empty()) {
      settings.fixture_file = regions;
      return make_detector(DetectorKind::fixture_file, settings);
    }
    if (!cascade.empty()) {
      settings.cascade_file = cascade;
      return make_detector(DetectorKind::external_detector, settings);
    }
    return nullptr;
  }
};

std::string default_root() {
  const char* env = std::getenv("FSS_DATA_ROOT");
  return env != nullptr ? env : "";
}

fs::path require_root(const std::string& root) {
  if (root.empty()) throw ConfigError("--root is required (or set FSS_DATA_ROOT)");
  if (!fs::is_directory(root)) throw DataError("dataset root " + root + " does not exist");
  return root;
}

void print_stats(std::ostream& out, const std::vector<SplitStats>& stats) {
  out << std::left << std::setw(8) << "split" << std::right << std::setw(7) << "total";
  for (const auto& key : attribute_keys()) out << std::setw(7) << key;
  out << '\n';
  for (const auto& s : stats) {
    out << std::left << std::setw(8) << to_string(s.split) << std::right << std::setw(7) << s.total;
    for (const auto& [key, n] : s.counts) out << std::setw(7) << n;
    out << '\n';
  }
}

int cmd_prepare(const std::string& root, bool verify_images, std::ostream& out, std::ostream& err) {
  const auto manifest = load_manifest(require_root(root));
  for (const auto& w : manifest.warnings) err << "warning: " << w << '\n';
  if (verify_images) {
    for (const auto& e : manifest.entries) {
      auto pair = load_pair(e);
      load_skin_patch(pair);
    }
  }
  print_stats(out, {compute_split_stats(manifest, Split::train), compute_split_stats(manifest, Split::test)});
  return kExitOk;
}

struct TrainFlags {
  std::string task;
  std::string root = default_root();
  std::string out;
  std::string config;
  bool no_multi_patch = false;
  bool no_style = false;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<std::int64_t> max_steps;
  std::string resume;
  bool print_config = false;
  DetectorFlags detector;
};

int cmd_train(const TrainFlags& f, std::ostream& out, std::ostream& err) {
  TrainOverrides o;
  if (!f.config.empty()) o.config_file = f.config;
  o.no_multi_patch = f.no_multi_patch;
  o.no_style = f.no_style;
  o.seed = f.seed;
  std::vector<std::string> warnings;
  TrainConfig config = resolve_train_config(parse_task(f.task), o, &warnings);
  if (f.epochs) {
    config.epochs = *f.epochs;
    if (config.freeze_stage1_after && *config.freeze_stage1_after >= config.epochs) config.freeze_stage1_after.reset();
    config.validate();
  }
  for (const auto& w : warnings) err << "warning: " << w << '\n';
  if (f.print_config) {
    out << config_to_json(config).dump(2) << '\n';
    return kExitOk;
  }
  if (f.out.empty()) throw ConfigError("--out is required");
  const auto manifest = load_manifest(require_root(f.root));
  auto detector = f.detector.make(config.regions);
  if (config.ablation.use_multi_patch && !detector) {
    throw ConfigError("multi-patch training needs --regions or --cascade (or pass --no-multi-patch)");
  }
  TrainRunOptions options;
  options.detector = detector.get();
  if (!f.resume.empty()) options.resume_from = fs::path(f.resume);
  options.max_steps = f.max_steps;
  save_config(config, fs::path(f.out) / "config.json");
  const auto result = train_run(manifest, config, f.out, options);
  out << "checkpoint " << result.final_checkpoint.file.string() << '\n'
      << "loss_curve " << result.loss_curve.string() << '\n'
      << "epochs " << result.final_checkpoint.epoch << '\n'
      << "steps " << result.final_checkpoint.step << '\n';
  return kExitOk;
}

bool is_image_file(const fs::path& p) {
  static const std::set<std::string> exts = {".png", ".jpg", ".jpeg", ".bmp"};
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return exts.contains(ext);
}

struct InferFlags {
  std::string checkpoint;
  std::string input;
  std::string out;
  std::optional<int> style;
  DetectorFlags detector;
};

int cmd_infer(const InferFlags& f, std::ostream& out, std::ostream&) {
  if (!fs::exists(f.input)) throw DataError("input " + f.input + " does not exist");
  Translator translator{fs::path(f.checkpoint)};
  const Task task = translator.task();
  if (f.style && !translator.style_enabled()) {
    throw ConfigError("--style is only valid for i2s checkpoints trained with style conditioning");
  }
  if (!f.style && translator.style_enabled()) throw ConfigError("--style 1|2|3 is required for this checkpoint");
  if (f.style && (*f.style < 1 || *f.style > 3)) throw ConfigError("--style must be 1, 2 or 3");

  std::vector<fs::path> inputs;
  if (fs::is_directory(f.input)) {
    for (const auto& entry : fs::directory_iterator(f.input)) {
      if (entry.is_regular_file() && is_image_file(entry.path())) inputs.push_back(entry.path());
    }
    std::sort(inputs.begin(), inputs.end());
    if (inputs.empty()) throw DataError("no images in " + f.input);
  } else {
    inputs.push_back(f.input);
  }

  TrainConfig probe = default_config(task);
  auto detector = f.detector.make(probe.regions);
  for (const auto& file : inputs) {
    cv::Mat image = read_image(file, input_channels(task));
    std::optional<FaceRegions> regions;
    if (detector) {
      const cv::Mat photo_like = image.channels() == 1 ? gray_to_rgb(image) : image;
      regions = detect_regions(photo_like, *detector, file.stem().string());
    }
    cv::Mat result = translator.infer(image, task, f.style, regions);
    const fs::path target = fs::path(f.out) / (file.stem().string() + ".png");
    write_image(target, result);
    out << target.string() << '\n';
  }
  return kExitOk;
}

struct EvalFlags {
  std::string pred;
  std::string root = default_root();
  std::string metric = "ssim";
  std::string plugin;
  std::string split = "test";
  std::string task;
  std::string model;
  std::string out;
};

int cmd_eval(const EvalFlags& f, std::ostream& out, std::ostream&) {
  std::optional<fs::path> plugin;
  if (!f.plugin.empty()) plugin = fs::path(f.plugin);
  const MetricPlugin metric = make_metric(f.metric, plugin);
  if (!fs::is_directory(f.pred)) throw DataError("prediction directory " + f.pred + " does not exist");
  const auto manifest = load_manifest(require_root(f.root));
  std::optional<Task> task;
  if (!f.task.empty()) task = parse_task(f.task);
  const auto report = evaluate_pairs(f.pred, manifest, parse_split(f.split), metric, task, f.model);
  if (f.out.empty()) {
    out << report_to_json(report).dump(2) << '\n';
  } else {
    save_report(report, f.out);
    out << f.out << '\n';
  }
  return kExitOk;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& format, const std::string& target,
               std::ostream& out) {
  const ReportFormat fmt = parse_report_format(format);
  std::vector<MetricReport> reports;
  for (const auto& file : inputs) reports.push_back(load_report(file));
  if (target.empty()) {
    out << render_report(reports, fmt);
  } else {
    emit_report(reports, fmt, target);
    out << target << '\n';
  }
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Facial sketch synthesis: data preparation, training, inference and evaluation"};
  app.require_subcommand(1);

  std::string prepare_root = default_root();
  bool verify_images = false;
  auto* prepare = app.add_subcommand("prepare", "Validate a dataset root and print split statistics");
  prepare->add_option("--root", prepare_root, "Dataset root (default: $FSS_DATA_ROOT)");
  prepare->add_flag("--verify-images", verify_images, "Also load every image pair and skin patch");

  TrainFlags tf;
  auto* train = app.add_subcommand("train", "Train a model and write checkpoints plus a loss curve");
  train->add_option("--task", tf.task, "i2s or s2i")->required()->check(CLI::IsMember({"i2s", "s2i"}));
  train->add_option("--root", tf.root, "Dataset root (default: $FSS_DATA_ROOT)");
  train->add_option("--out", tf.out, "Output directory for checkpoints and loss_curve.csv");
  train->add_option("--config", tf.config, "JSON config overriding the task defaults");
  train->add_flag("--no-multi-patch", tf.no_multi_patch, "Disable the part-wise first stage");
  train->add_flag("--no-style", tf.no_style, "Disable style conditioning (i2s)");
  train->add_option("--seed", tf.seed, "Random seed");
  train->add_option("--epochs", tf.epochs, "Override the number of epochs");
  train->add_option("--max-steps", tf.max_steps, "Stop after this many optimizer steps");
  train->add_option("--resume", tf.resume, "Resume from a checkpoint");
  train->add_flag("--print-config", tf.print_config, "Print the resolved config as JSON and exit");
  tf.detector.add_to(train);

  InferFlags inf;
  auto* infer = app.add_subcommand("infer", "Translate images with a trained checkpoint");
  infer->add_option("--checkpoint", inf.checkpoint, "Checkpoint file")->required();
  infer->add_option("--input", inf.input, "Image file or directory of images")->required();
  infer->add_option("--out", inf.out, "Output directory; writes <name>.png per input")->required();
  infer->add_option("--style", inf.style, "Sketch style label 1, 2 or 3 (i2s only)");
  inf.detector.add_to(infer);

  EvalFlags ef;
  auto* eval = app.add_subcommand("eval", "Score predictions against references with attribute slices");
  eval->add_option("--pred", ef.pred, "Directory holding <pair_id>.png predictions")->required();
  eval->add_option("--root", ef.root, "Dataset root (default: $FSS_DATA_ROOT)");
  eval->add_option("--metric", ef.metric, "Metric name (ssim, or the name a plugin provides)");
  eval->add_option("--plugin", ef.plugin, "Shared library implementing an external metric");
  eval->add_option("--split", ef.split, "Split to evaluate (train or test)");
  eval->add_option("--task", ef.task, "i2s or s2i (default: inferred from prediction channels)");
  eval->add_option("--model", ef.model, "Model label stored in the report");
  eval->add_option("--out", ef.out, "Report JSON file (default: stdout)");

  std::vector<std::string> report_inputs;
  std::string report_format = "markdown";
  std::string report_out;
  auto* report = app.add_subcommand("report", "Render report JSON files as a comparison table");
  report->add_option("--in", report_inputs, "Report JSON files")->required();
  report->add_option("--format", report_format, "csv or markdown")->check(CLI::IsMember({"csv", "markdown"}));
  report->add_option("--out", report_out, "Output file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (*prepare) return cmd_prepare(prepare_root, verify_images, out, err);
    if (*train) return cmd_train(tf, out, err);
    if (*infer) return cmd_infer(inf, out, err);
    if (*eval) return cmd_eval(ef, out, err);
    if (*report) return cmd_report(report_inputs, report_format, report_out, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const GeometryError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const DetectionError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const TrainingAborted& e) {
    err << "training aborted: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace fss::cli
