#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include "fss/fs2k.hpp"
#include "fss/image.hpp"

namespace fss {

// SSIM window parameters.
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;
inline constexpr double kSsimRange = 255.0;

/// Mean SSIM over all valid 11x11 windows. Inputs are 8-bit with 1 or 3 channels;
/// multi-channel images score the mean of per-channel values.
double ssim(const cv::Mat& a, const cv::Mat& b);

/// Normalized 11x11 Gaussian window used by ssim().
std::vector<double> ssim_gaussian_window();

/// A full-reference image metric (prediction, reference) -> score.
struct MetricPlugin {
  std::string name;
  std::function<double(const cv::Mat& prediction, const cv::Mat& reference)> score;
  /// Keeps a dynamically loaded library alive for as long as the plugin is.
  std::shared_ptr<void> handle;
};

MetricPlugin ssim_metric();

/// Loads a metric from a shared library exporting the C ABI
///   const char* fss_metric_name(void);
///   double fss_metric_score(const unsigned char* pred, const unsigned char* ref,
///                           int width, int height, int channels);
/// where both buffers are tightly packed HWC 8-bit images of equal size.
MetricPlugin load_metric_plugin(const std::filesystem::path& library);

/// Built-in metric by name ("ssim"); with a library, the plugin must report `name`.
/// Throws ConfigError for an unknown name.
MetricPlugin make_metric(const std::string& name, const std::optional<std::filesystem::path>& library = {});

struct SliceStat {
  std::size_t count = 0;
  double mean = 0.0;

  bool operator==(const SliceStat&) const = default;
};

struct MetricReport {
  std::string metric;
  std::string model;
  std::size_t count = 0;
  double overall = 0.0;
  /// In attribute_keys() order.
  std::vector<std::pair<std::string, SliceStat>> slices;
  /// Per-pair scores in manifest order.
  std::vector<std::pair<std::string, double>> scores;

  const SliceStat& slice(const std::string& key) const;
};

nlohmann::json report_to_json(const MetricReport& report);
MetricReport report_from_json(const nlohmann::json& j);
void save_report(const MetricReport& report, const std::filesystem::path& file);
MetricReport load_report(const std::filesystem::path& file);

/// Aggregates per-pair scores into overall and attribute-slice means.
MetricReport aggregate_scores(const DatasetManifest& manifest, const std::vector<std::pair<std::string, double>>& scores,
                              const std::string& metric, const std::string& model = {});

/// Scores `<pred_dir>/<pair_id>.png` against each pair's reference (sketch for I2S,
/// photo for S2I; inferred from the prediction channel count when `task` is unset).
/// References are resized to the prediction size.
MetricReport evaluate_pairs(const std::filesystem::path& pred_dir, const DatasetManifest& manifest, Split split,
                            const MetricPlugin& metric, std::optional<Task> task = {}, const std::string& model = {});

enum class ReportFormat { csv, markdown };
ReportFormat parse_report_format(const std::string& text);

/// Renders one row per report; columns are overall then the slice keys. Fixed 3 decimals.
std::string render_report(const std::vector<MetricReport>& reports, ReportFormat format);
void emit_report(const std::vector<MetricReport>& reports, ReportFormat format, const std::filesystem::path& file);

/// Writes a grid with one row per triplet: input | reference | prediction.
/// Every cell is resized to the first input's size; grayscale cells are expanded to RGB.
void gallery(const std::vector<cv::Mat>& inputs, const std::vector<cv::Mat>& references,
             const std::vector<cv::Mat>& predictions, const std::filesystem::path& out);

}  // namespace fss
