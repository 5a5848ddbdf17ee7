#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <opencv2/imgproc.hpp>

#include "fixture.hpp"
#include "fss/cli.hpp"
#include "fss/error.hpp"
#include "fss/metrics.hpp"
#include "ssim_oracle.hpp"

using namespace fss;
using fss::testing::TempDir;
namespace fs = std::filesystem;

namespace {

cv::Mat random_gray(int rows, int cols, cv::RNG& rng) {
  cv::Mat m(rows, cols, CV_8UC1);
  rng.fill(m, cv::RNG::UNIFORM, 0, 256);
  return m;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "fss");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = fss::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

/// Writes a blurred copy of every test reference as the prediction.
void write_predictions(const DatasetManifest& m, const fs::path& dir, Task task) {
  for (const auto* e : m.entries_in(Split::test)) {
    cv::Mat ref = read_image(task == Task::i2s ? e->sketch_file : e->photo_file, output_channels(task));
    cv::Mat blurred;
    cv::GaussianBlur(ref, blurred, cv::Size(3, 3), 0.8);
    write_image(dir / (e->pair_id + ".png"), blurred);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// SSIM
// ---------------------------------------------------------------------------

TEST(Ssim, IdenticalImagesScoreOne) {
  cv::RNG rng(1);
  const auto x = random_gray(32, 40, rng);
  EXPECT_EQ(ssim(x, x), 1.0);
  cv::Mat rgb(20, 20, CV_8UC3);
  rng.fill(rgb, cv::RNG::UNIFORM, 0, 256);
  EXPECT_EQ(ssim(rgb, rgb), 1.0);
}

TEST(Ssim, MatchesBruteForceAndIsSymmetric) {
  cv::RNG rng(2);
  for (int i = 0; i < 10; ++i) {
    const auto a = random_gray(24, 31, rng);
    cv::Mat b = a.clone();
    cv::Mat noise = random_gray(24, 31, rng);
    cv::addWeighted(a, 0.6, noise, 0.4, 0.0, b);
    const double fast = ssim(a, b);
    EXPECT_NEAR(fast, fss::testing::brute_force_ssim(a, b), 1e-6);
    EXPECT_NEAR(fast, ssim(b, a), 1e-12);
    EXPECT_LT(fast, 1.0);
    EXPECT_GE(fast, -1.0);
  }
}

TEST(Ssim, RgbIsMeanOfChannels) {
  cv::RNG rng(3);
  cv::Mat a(16, 16, CV_8UC3), b(16, 16, CV_8UC3);
  rng.fill(a, cv::RNG::UNIFORM, 0, 256);
  rng.fill(b, cv::RNG::UNIFORM, 0, 256);
  std::vector<cv::Mat> ca, cb;
  cv::split(a, ca);
  cv::split(b, cb);
  double expected = 0.0;
  for (int c = 0; c < 3; ++c) expected += fss::testing::brute_force_ssim(ca[c], cb[c]) / 3.0;
  EXPECT_NEAR(ssim(a, b), expected, 1e-6);
}

TEST(Ssim, RejectsBadInputs) {
  cv::RNG rng(4);
  EXPECT_THROW(ssim(random_gray(20, 20, rng), random_gray(20, 21, rng)), ShapeError);
  EXPECT_THROW(ssim(random_gray(10, 20, rng), random_gray(10, 20, rng)), ShapeError);
  cv::Mat f(20, 20, CV_32F, cv::Scalar(0));
  EXPECT_THROW(ssim(f, f), ShapeError);
}

TEST(Ssim, GaussianWindowIsNormalized) {
  const auto w = ssim_gaussian_window();
  ASSERT_EQ(w.size(), 121u);
  double total = 0.0;
  for (double v : w) total += v;
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(w[60], *std::max_element(w.begin(), w.end()));
}

// ---------------------------------------------------------------------------
// Plugins
// ---------------------------------------------------------------------------

TEST(Plugins, RegistryAndExternalLibrary) {
  EXPECT_EQ(make_metric("ssim").name, "ssim");
  EXPECT_THROW(make_metric("fid"), ConfigError);
  EXPECT_THROW(make_metric("scoot"), ConfigError);
  const auto mae = make_metric("mae", fs::path(FSS_TEST_PLUGIN));
  cv::Mat a(4, 4, CV_8UC1, cv::Scalar(0)), b(4, 4, CV_8UC1, cv::Scalar(255));
  EXPECT_DOUBLE_EQ(mae.score(a, a), 1.0);
  EXPECT_DOUBLE_EQ(mae.score(a, b), 0.0);
  EXPECT_THROW(make_metric("scoot", fs::path(FSS_TEST_PLUGIN)), ConfigError);
  EXPECT_THROW(load_metric_plugin("/nonexistent/libnothing.so"), ConfigError);
}

// ---------------------------------------------------------------------------
// Evaluation and reports
// ---------------------------------------------------------------------------

TEST(Evaluate, SlicesDecomposeOverallMean) {
  TempDir dir("eval");
  auto fx = fss::testing::make_fixture_dataset(dir.path() / "data", 0, 12, 48, 48);
  write_predictions(fx.manifest, dir.path() / "pred", Task::i2s);
  const auto report = evaluate_pairs(dir.path() / "pred", fx.manifest, Split::test, ssim_metric());
  EXPECT_EQ(report.count, 12u);
  EXPECT_EQ(report.slices.size(), 17u);
  const auto stats = compute_split_stats(fx.manifest, Split::test);
  for (const auto& [key, n] : stats.counts) EXPECT_EQ(report.slice(key).count, n) << key;
  const std::vector<std::pair<std::string, std::string>> binary = {
      {"w/ H", "w/o H"}, {"M", "F"}, {"w/ E", "w/o E"}, {"w/ S", "w/o S"}, {"w/ F", "w/o F"}};
  for (const auto& [a, b] : binary) {
    const auto& sa = report.slice(a);
    const auto& sb = report.slice(b);
    EXPECT_NEAR((sa.count * sa.mean + sb.count * sb.mean) / (sa.count + sb.count), report.overall, 1e-9);
  }
  // Predictions at a smaller size are scored against resized references.
  for (const auto* e : fx.manifest.entries_in(Split::test)) {
    cv::Mat small;
    cv::resize(read_image(e->sketch_file, 1), small, cv::Size(24, 24), 0, 0, cv::INTER_AREA);
    write_image(dir.path() / "small" / (e->pair_id + ".png"), small);
  }
  const auto resized = evaluate_pairs(dir.path() / "small", fx.manifest, Split::test, ssim_metric());
  EXPECT_NEAR(resized.overall, 1.0, 1e-12);
}

TEST(Evaluate, ErrorsNameMissingPair) {
  TempDir dir("eval_missing");
  auto fx = fss::testing::make_fixture_dataset(dir.path() / "data", 1, 3, 32, 32);
  write_predictions(fx.manifest, dir.path() / "pred", Task::s2i);
  const auto& victim = *fx.manifest.entries_in(Split::test)[1];
  fs::remove(dir.path() / "pred" / (victim.pair_id + ".png"));
  try {
    evaluate_pairs(dir.path() / "pred", fx.manifest, Split::test, ssim_metric());
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    EXPECT_EQ(e.pair_id(), victim.pair_id);
  }
  DatasetManifest empty = fx.manifest;
  empty.entries.clear();
  EXPECT_THROW(evaluate_pairs(dir.path() / "pred", empty, Split::test, ssim_metric()), DataError);
}

TEST(Evaluate, SinglePairOverallEqualsScore) {
  TempDir dir("eval_single");
  auto fx = fss::testing::make_fixture_dataset(dir.path() / "data", 0, 1, 32, 32);
  write_predictions(fx.manifest, dir.path() / "pred", Task::s2i);
  const auto r = evaluate_pairs(dir.path() / "pred", fx.manifest, Split::test, ssim_metric(), Task::s2i);
  ASSERT_EQ(r.scores.size(), 1u);
  EXPECT_EQ(r.overall, r.scores[0].second);
}

namespace {

MetricReport named_report(const std::string& model, double overall) {
  MetricReport r;
  r.metric = "ssim";
  r.model = model;
  r.count = 2;
  r.overall = overall;
  for (const auto& key : attribute_keys()) r.slices.emplace_back(key, SliceStat{1, overall});
  return r;
}

}  // namespace

TEST(Report, RendersDeterministicTables) {
  const std::vector<MetricReport> reports = {named_report("full", 0.510), named_report("Baseline", 0.487)};
  const auto csv = render_report(reports, ReportFormat::csv);
  EXPECT_EQ(csv, render_report(reports, ReportFormat::csv));
  std::istringstream lines(csv);
  std::string header, row;
  std::getline(lines, header);
  std::getline(lines, row);
  EXPECT_EQ(header.rfind("model,metric,overall,w/ H,w/o H,H(b),H(bl)", 0), 0u);
  EXPECT_EQ(row.rfind("full,ssim,0.510,", 0), 0u);
  EXPECT_EQ(std::count(header.begin(), header.end(), ','), 19);

  const auto md = render_report(reports, ReportFormat::markdown);
  EXPECT_NE(md.find("| full | ssim | 0.510 |"), std::string::npos);
  EXPECT_NE(md.find("| Baseline | ssim | 0.487 |"), std::string::npos);

  EXPECT_THROW(render_report({}, ReportFormat::csv), DataError);
  auto odd = named_report("x", 0.1);
  odd.slices.pop_back();
  EXPECT_THROW(render_report({reports[0], odd}, ReportFormat::csv), DataError);
  EXPECT_THROW(parse_report_format("html"), ConfigError);
}

TEST(Report, JsonRoundTrip) {
  TempDir dir("report_json");
  auto r = named_report("m", 0.25);
  r.slices[3].second = SliceStat{0, 0.0};
  r.scores = {{"a", 0.2}, {"b", 0.3}};
  save_report(r, dir.path() / "r.json");
  const auto back = load_report(dir.path() / "r.json");
  EXPECT_EQ(back.slices, r.slices);
  EXPECT_EQ(back.scores, r.scores);
  EXPECT_EQ(back.overall, r.overall);
  EXPECT_EQ(render_report({back}, ReportFormat::markdown), render_report({r}, ReportFormat::markdown));
}

TEST(Gallery, GridLayoutAndDeterminism) {
  TempDir dir("gallery");
  cv::RNG rng(5);
  std::vector<cv::Mat> in, ref, pred;
  for (int i = 0; i < 3; ++i) {
    cv::Mat photo(20, 16, CV_8UC3);
    rng.fill(photo, cv::RNG::UNIFORM, 0, 256);
    in.push_back(photo);
    ref.push_back(random_gray(20, 16, rng));
    pred.push_back(random_gray(40, 32, rng));
  }
  gallery(in, ref, pred, dir.path() / "a.png");
  gallery(in, ref, pred, dir.path() / "b.png");
  const cv::Mat grid = read_image(dir.path() / "a.png", 3);
  EXPECT_EQ(grid.size(), cv::Size(48, 60));
  EXPECT_EQ(slurp(dir.path() / "a.png"), slurp(dir.path() / "b.png"));
  EXPECT_THROW(gallery({}, {}, {}, dir.path() / "c.png"), DataError);
  EXPECT_THROW(gallery(in, ref, {pred[0]}, dir.path() / "c.png"), DataError);
}

// ---------------------------------------------------------------------------
// Command line
// ---------------------------------------------------------------------------

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run_cli({"--help"}).code, 0);
  const auto train_help = run_cli({"train", "--help"});
  EXPECT_EQ(train_help.code, 0);
  for (const char* flag : {"--task", "--root", "--out", "--config", "--no-multi-patch", "--no-style", "--seed"}) {
    EXPECT_NE(train_help.out.find(flag), std::string::npos) << flag;
  }
  EXPECT_EQ(run_cli({}).code, 1);
  EXPECT_EQ(run_cli({"bogus"}).code, 1);
  EXPECT_EQ(run_cli({"train", "--task", "x2y"}).code, 1);
  EXPECT_EQ(run_cli({"prepare", "--help"}).code, 0);
}

TEST(Cli, AblationFlagsBuildConfigurations) {
  const auto base = cli::resolve_train_config(Task::i2s, {std::nullopt, true, true, std::nullopt});
  EXPECT_EQ(base.ablation, (AblationFlags{false, false}));
  const auto mp = cli::resolve_train_config(Task::i2s, {std::nullopt, false, true, std::nullopt});
  EXPECT_EQ(mp.ablation, (AblationFlags{true, false}));
  const auto full = cli::resolve_train_config(Task::i2s, {});
  EXPECT_EQ(full.ablation, (AblationFlags{true, true}));

  std::vector<std::string> warnings;
  const auto s2i = cli::resolve_train_config(Task::s2i, {std::nullopt, false, true, 9}, &warnings);
  EXPECT_EQ(warnings.size(), 1u);
  EXPECT_EQ(s2i.seed, 9u);
  EXPECT_EQ(s2i.epochs, 400);
  EXPECT_EQ(s2i.freeze_stage1_after, 250);

  const auto printed = run_cli({"train", "--task", "s2i", "--no-style", "--print-config"});
  EXPECT_EQ(printed.code, 0);
  EXPECT_NE(printed.err.find("warning"), std::string::npos);
  EXPECT_EQ(nlohmann::json::parse(printed.out)["freeze_stage1_after"], 250);
}

TEST(Cli, PrepareReportsStatsAndDataErrors) {
  TempDir dir("cli_prepare");
  auto fx = fss::testing::make_fixture_dataset(dir.path(), 6, 3, 32, 32);
  const auto ok = run_cli({"prepare", "--root", dir.path().string(), "--verify-images"});
  EXPECT_EQ(ok.code, 0) << ok.err;
  EXPECT_NE(ok.out.find("train"), std::string::npos);
  EXPECT_NE(ok.out.find("S3"), std::string::npos);
  fs::remove(dir.path() / "anno_test.json");
  EXPECT_EQ(run_cli({"prepare", "--root", dir.path().string()}).code, 2);
  EXPECT_EQ(run_cli({"prepare", "--root", (dir.path() / "missing").string()}).code, 2);
}

TEST(Cli, TrainInferEvalReportWorkflow) {
  TempDir dir("cli_flow");
  auto fx = fss::testing::make_fixture_dataset(dir.path() / "data", 2, 2, 64, 64);
  auto cfg = fss::testing::tiny_config(Task::i2s);
  save_config(cfg, dir.path() / "tiny.json");
  const auto root = (dir.path() / "data").string();
  const auto out = (dir.path() / "run").string();

  // Multi-patch without a region source is a usage error.
  EXPECT_EQ(run_cli({"train", "--task", "i2s", "--root", root, "--out", out, "--config", (dir.path() / "tiny.json").string()}).code, 1);

  const auto trained = run_cli({"train", "--task", "i2s", "--root", root, "--out", out, "--config",
                            (dir.path() / "tiny.json").string(), "--regions", fx.regions_file.string()});
  ASSERT_EQ(trained.code, 0) << trained.err;
  const auto ckpt = (fs::path(out) / "checkpoint_final.pt").string();
  ASSERT_TRUE(fs::exists(ckpt));
  EXPECT_TRUE(fs::exists(fs::path(out) / "loss_curve.csv"));

  // Inference over a directory of test photos, named after the pair ids.
  const fs::path inputs = dir.path() / "inputs";
  fs::path fixture = dir.path() / "infer_regions.json";
  std::map<std::string, std::array<RegionBox, 4>> boxes;
  for (const auto* e : fx.manifest.entries_in(Split::test)) {
    const auto stem = fs::path(e->pair_id).filename().string();
    fs::create_directories(inputs);
    fs::copy_file(e->photo_file, inputs / (stem + ".png"));
    boxes[stem] = fx.regions[e->pair_id];
  }
  FixtureDetector::write(fixture, boxes);
  const auto pred = dir.path() / "pred";
  const auto inferred = run_cli({"infer", "--checkpoint", ckpt, "--input", inputs.string(), "--out", pred.string(),
                             "--style", "2", "--regions", fixture.string()});
  ASSERT_EQ(inferred.code, 0) << inferred.err;
  EXPECT_EQ(std::distance(fs::directory_iterator(pred), fs::directory_iterator{}), 2);
  EXPECT_EQ(run_cli({"infer", "--checkpoint", ckpt, "--input", inputs.string(), "--out", pred.string(), "--regions",
                 fixture.string()}).code, 1);
  EXPECT_EQ(run_cli({"infer", "--checkpoint", ckpt, "--input", (dir.path() / "nope.png").string(), "--out",
                 pred.string(), "--style", "1"}).code, 2);

  // Evaluation expects predictions at <pair_id>.png.
  const auto eval_dir = dir.path() / "eval_pred";
  for (const auto* e : fx.manifest.entries_in(Split::test)) {
    const auto stem = fs::path(e->pair_id).filename().string();
    fs::create_directories((eval_dir / e->pair_id).parent_path());
    fs::copy_file(pred / (stem + ".png"), eval_dir / (e->pair_id + ".png"));
  }
  const auto report_a = (dir.path() / "a.json").string();
  const auto report_b = (dir.path() / "b.json").string();
  ASSERT_EQ(run_cli({"eval", "--pred", eval_dir.string(), "--root", root, "--metric", "ssim", "--out", report_a,
                 "--model", "A"}).code, 0);
  ASSERT_EQ(run_cli({"eval", "--pred", eval_dir.string(), "--root", root, "--metric", "mae", "--plugin",
                 FSS_TEST_PLUGIN, "--out", report_b, "--model", "B"}).code, 0);
  EXPECT_EQ(run_cli({"eval", "--pred", eval_dir.string(), "--root", root, "--metric", "lpips"}).code, 1);
  EXPECT_EQ(run_cli({"eval", "--pred", (dir.path() / "pred_missing").string(), "--root", root}).code, 2);

  const auto table = run_cli({"report", "--in", report_a, report_b, "--format", "markdown"});
  ASSERT_EQ(table.code, 0) << table.err;
  EXPECT_EQ(std::count(table.out.begin(), table.out.end(), '\n'), 4);
  EXPECT_EQ(table.out, run_cli({"report", "--in", report_a, report_b, "--format", "markdown"}).out);
  EXPECT_EQ(run_cli({"report", "--in", report_a, "--format", "xml"}).code, 1);

  // Non-finite training aborts with the runtime exit code.
  auto bad = cfg;
  bad.lr_generator = 1e30;
  bad.lr_discriminator = 1e30;
  bad.epochs = 3;
  save_config(bad, dir.path() / "bad.json");
  EXPECT_EQ(run_cli({"train", "--task", "i2s", "--root", root, "--out", (dir.path() / "bad").string(), "--config",
                 (dir.path() / "bad.json").string(), "--regions", fx.regions_file.string()}).code, 3);
}
