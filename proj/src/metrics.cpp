#include "fss/metrics.hpp"

#include <dlfcn.h>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "fss/error.hpp"

namespace fss {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<double> ssim_gaussian_window() {
  std::vector<double> w(kSsimWindow * kSsimWindow);
  const int r = kSsimWindow / 2;
  double total = 0.0;
  for (int y = -r; y <= r; ++y) {
    for (int x = -r; x <= r; ++x) {
      const double v = std::exp(-(x * x + y * y) / (2.0 * kSsimSigma * kSsimSigma));
      w[(y + r) * kSsimWindow + (x + r)] = v;
      total += v;
    }
  }
  for (double& v : w) v /= total;
  return w;
}

namespace {

/// Valid-mode separable Gaussian filtering in double precision.
cv::Mat filter_valid(const cv::Mat& src, const cv::Mat& kernel_1d) {
  cv::Mat out;
  cv::sepFilter2D(src, out, CV_64F, kernel_1d, kernel_1d, cv::Point(-1, -1), 0.0, cv::BORDER_CONSTANT);
  const int r = kSsimWindow / 2;
  return out(cv::Rect(r, r, src.cols - 2 * r, src.rows - 2 * r)).clone();
}

double ssim_channel(const cv::Mat& a, const cv::Mat& b) {
  const double c1 = std::pow(kSsimK1 * kSsimRange, 2);
  const double c2 = std::pow(kSsimK2 * kSsimRange, 2);
  cv::Mat kernel = cv::getGaussianKernel(kSsimWindow, kSsimSigma, CV_64F);
  cv::Mat x, y;
  a.convertTo(x, CV_64F);
  b.convertTo(y, CV_64F);

  const cv::Mat mu_x = filter_valid(x, kernel);
  const cv::Mat mu_y = filter_valid(y, kernel);
  const cv::Mat xx = filter_valid(x.mul(x), kernel) - mu_x.mul(mu_x);
  const cv::Mat yy = filter_valid(y.mul(y), kernel) - mu_y.mul(mu_y);
  const cv::Mat xy = filter_valid(x.mul(y), kernel) - mu_x.mul(mu_y);

  cv::Mat num = (2.0 * mu_x.mul(mu_y) + c1).mul(2.0 * xy + c2);
  cv::Mat den = (mu_x.mul(mu_x) + mu_y.mul(mu_y) + c1).mul(xx + yy + c2);
  cv::Mat map;
  cv::divide(num, den, map);
  return cv::mean(map)[0];
}

}  // namespace

double ssim(const cv::Mat& a, const cv::Mat& b) {
  if (a.size() != b.size() || a.channels() != b.channels()) {
    throw ShapeError("ssim: image dimensions differ");
  }
  if (a.depth() != CV_8U || b.depth() != CV_8U) throw ShapeError("ssim: expected 8-bit images");
  if (a.rows < kSsimWindow || a.cols < kSsimWindow) {
    throw ShapeError("ssim: images must be at least 11x11");
  }
  // Identical inputs score exactly 1; skip the floating-point round trip.
  if (cv::norm(a, b, cv::NORM_INF) == 0.0) return 1.0;
  std::vector<cv::Mat> ca, cb;
  cv::split(a, ca);
  cv::split(b, cb);
  double total = 0.0;
  for (std::size_t c = 0; c < ca.size(); ++c) total += ssim_channel(ca[c], cb[c]);
  return total / static_cast<double>(ca.size());
}

MetricPlugin ssim_metric() {
  return {"ssim", [](const cv::Mat& p, const cv::Mat& r) { return ssim(p, r); }, nullptr};
}

MetricPlugin load_metric_plugin(const fs::path& library) {
  void* raw = ::dlopen(library.c_str(), RTLD_NOW | RTLD_LOCAL);
  if (raw == nullptr) throw ConfigError("cannot load metric plugin " + library.string() + ": " + ::dlerror());
  std::shared_ptr<void> handle(raw, [](void* h) { ::dlclose(h); });
  using NameFn = const char* (*)();
  using ScoreFn = double (*)(const unsigned char*, const unsigned char*, int, int, int);
  auto name_fn = reinterpret_cast<NameFn>(::dlsym(raw, "fss_metric_name"));
  auto score_fn = reinterpret_cast<ScoreFn>(::dlsym(raw, "fss_metric_score"));
  if (name_fn == nullptr || score_fn == nullptr) {
    throw ConfigError("metric plugin " + library.string() + " does not export fss_metric_name/fss_metric_score");
  }
  MetricPlugin plugin;
  plugin.name = name_fn();
  plugin.handle = handle;
  plugin.score = [score_fn, handle](const cv::Mat& p, const cv::Mat& r) {
    if (p.size() != r.size() || p.type() != r.type()) throw ShapeError("metric plugin: image dimensions differ");
    const cv::Mat pc = p.isContinuous() ? p : p.clone();
    const cv::Mat rc = r.isContinuous() ? r : r.clone();
    const double v = score_fn(pc.data, rc.data, pc.cols, pc.rows, pc.channels());
    if (!std::isfinite(v)) throw Error("metric plugin returned a non-finite score");
    return v;
  };
  return plugin;
}

MetricPlugin make_metric(const std::string& name, const std::optional<fs::path>& library) {
  if (library) {
    auto plugin = load_metric_plugin(*library);
    if (plugin.name != name) {
      throw ConfigError("plugin " + library->string() + " provides '" + plugin.name + "', not '" + name + "'");
    }
    return plugin;
  }
  if (name == "ssim") return ssim_metric();
  if (name == "scoot") throw ConfigError("metric 'scoot' needs an external implementation (--plugin)");
  throw ConfigError("unknown metric '" + name + "'");
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

const SliceStat& MetricReport::slice(const std::string& key) const {
  for (const auto& [k, s] : slices) {
    if (k == key) return s;
  }
  throw DataError("report has no slice '" + key + "'");
}

json report_to_json(const MetricReport& r) {
  json slices = json::object();
  json order = json::array();
  for (const auto& [key, s] : r.slices) {
    order.push_back(key);
    slices[key] = {{"count", s.count}, {"mean", s.count == 0 ? json(nullptr) : json(s.mean)}};
  }
  json scores = json::array();
  for (const auto& [id, v] : r.scores) scores.push_back({{"pair_id", id}, {"score", v}});
  return {{"metric", r.metric}, {"model", r.model},   {"count", r.count},  {"overall", r.overall},
          {"slice_order", order}, {"slices", slices}, {"scores", scores}};
}

MetricReport report_from_json(const json& j) {
  try {
    MetricReport r;
    r.metric = j.at("metric").get<std::string>();
    r.model = j.value("model", std::string{});
    r.count = j.at("count").get<std::size_t>();
    r.overall = j.at("overall").get<double>();
    for (const auto& key : j.at("slice_order")) {
      const auto& s = j.at("slices").at(key.get<std::string>());
      SliceStat stat;
      stat.count = s.at("count").get<std::size_t>();
      stat.mean = s.at("mean").is_null() ? 0.0 : s.at("mean").get<double>();
      r.slices.emplace_back(key.get<std::string>(), stat);
    }
    if (j.contains("scores")) {
      for (const auto& s : j["scores"]) r.scores.emplace_back(s.at("pair_id").get<std::string>(), s.at("score").get<double>());
    }
    return r;
  } catch (const json::exception& err) {
    throw SchemaError("report", err.what());
  }
}

void save_report(const MetricReport& report, const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file.string());
  out << report_to_json(report).dump(2) << '\n';
}

MetricReport load_report(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open report " + file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& err) {
    throw SchemaError(file.string(), err.what());
  }
  return report_from_json(j);
}

MetricReport aggregate_scores(const DatasetManifest& manifest, const std::vector<std::pair<std::string, double>>& scores,
                              const std::string& metric, const std::string& model) {
  if (scores.empty()) throw DataError("no scores to aggregate");
  MetricReport r;
  r.metric = metric;
  r.model = model;
  r.scores = scores;
  std::map<std::string, std::pair<std::size_t, double>> acc;
  for (const auto& key : attribute_keys()) acc[key] = {0, 0.0};
  double total = 0.0;
  for (const auto& [id, v] : scores) {
    const ManifestEntry* e = &manifest.find(id);
    total += v;
    for (const auto& key : keys_for(e->attributes, e->style)) {
      acc[key].first += 1;
      acc[key].second += v;
    }
  }
  r.count = scores.size();
  r.overall = total / static_cast<double>(scores.size());
  for (const auto& key : attribute_keys()) {
    const auto& [n, sum] = acc[key];
    r.slices.emplace_back(key, SliceStat{n, n == 0 ? 0.0 : sum / static_cast<double>(n)});
  }
  return r;
}

MetricReport evaluate_pairs(const fs::path& pred_dir, const DatasetManifest& manifest, Split split,
                            const MetricPlugin& metric, std::optional<Task> task, const std::string& model) {
  const auto entries = manifest.entries_in(split);
  if (entries.empty()) throw DataError("split '" + to_string(split) + "' is empty");
  std::vector<std::pair<std::string, double>> scores;
  scores.reserve(entries.size());
  for (const ManifestEntry* e : entries) {
    const fs::path pred_file = pred_dir / (e->pair_id + ".png");
    if (!fs::is_regular_file(pred_file)) {
      throw LoadError(e->pair_id, "missing prediction " + pred_file.string());
    }
    cv::Mat raw = cv::imread(pred_file.string(), cv::IMREAD_UNCHANGED);
    if (raw.empty()) throw LoadError(e->pair_id, "unreadable prediction " + pred_file.string());
    const Task t = task.value_or(raw.channels() == 1 ? Task::i2s : Task::s2i);
    const int channels = output_channels(t);
    cv::Mat pred = read_image(pred_file, channels);
    cv::Mat ref = read_image(t == Task::i2s ? e->sketch_file : e->photo_file, channels);
    if (ref.size() != pred.size()) {
      cv::Mat resized;
      const int interp = ref.cols > pred.cols ? cv::INTER_AREA : cv::INTER_LINEAR;
      cv::resize(ref, resized, pred.size(), 0, 0, interp);
      ref = resized;
    }
    scores.emplace_back(e->pair_id, metric.score(pred, ref));
  }
  return aggregate_scores(manifest, scores, metric.name, model);
}

ReportFormat parse_report_format(const std::string& text) {
  if (text == "csv") return ReportFormat::csv;
  if (text == "markdown" || text == "md") return ReportFormat::markdown;
  throw ConfigError("unknown report format '" + text + "'");
}

namespace {

std::string fixed3(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3) << v;
  return os.str();
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string render_report(const std::vector<MetricReport>& reports, ReportFormat format) {
  if (reports.empty()) throw DataError("no reports to render");
  std::vector<std::string> keys;
  for (const auto& [k, s] : reports.front().slices) keys.push_back(k);
  for (const auto& r : reports) {
    std::vector<std::string> other;
    for (const auto& [k, s] : r.slices) other.push_back(k);
    if (other != keys) throw DataError("reports do not share slice keys");
  }

  std::vector<std::string> header = {"model", "metric", "overall"};
  header.insert(header.end(), keys.begin(), keys.end());
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    std::vector<std::string> row = {r.model.empty() ? "model" + std::to_string(i + 1) : r.model, r.metric,
                                    fixed3(r.overall)};
    for (const auto& [k, s] : r.slices) row.push_back(s.count == 0 ? "n/a" : fixed3(s.mean));
    rows.push_back(std::move(row));
  }

  std::ostringstream os;
  if (format == ReportFormat::csv) {
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t c = 0; c < cells.size(); ++c) os << (c ? "," : "") << csv_field(cells[c]);
      os << '\n';
    };
    line(header);
    for (const auto& row : rows) line(row);
  } else {
    auto line = [&](const std::vector<std::string>& cells) {
      os << '|';
      for (const auto& cell : cells) os << ' ' << cell << " |";
      os << '\n';
    };
    line(header);
    os << '|';
    for (std::size_t c = 0; c < header.size(); ++c) os << (c < 2 ? " --- |" : " ---: |");
    os << '\n';
    for (const auto& row : rows) line(row);
  }
  return os.str();
}

void emit_report(const std::vector<MetricReport>& reports, ReportFormat format, const fs::path& file) {
  const std::string text = render_report(reports, format);
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error("cannot write " + file.string());
  out << text;
}

void gallery(const std::vector<cv::Mat>& inputs, const std::vector<cv::Mat>& references,
             const std::vector<cv::Mat>& predictions, const fs::path& out) {
  if (inputs.size() != references.size() || inputs.size() != predictions.size()) {
    throw DataError("gallery: input, reference and prediction lists differ in length");
  }
  if (inputs.empty()) throw DataError("gallery: no images");
  const cv::Size cell = inputs.front().size();
  auto prepare = [&](const cv::Mat& m) {
    if (m.empty()) throw DataError("gallery: empty image");
    cv::Mat rgb = m.channels() == 1 ? gray_to_rgb(m) : m;
    if (rgb.size() != cell) {
      cv::Mat resized;
      cv::resize(rgb, resized, cell, 0, 0, cv::INTER_AREA);
      rgb = resized;
    }
    return rgb;
  };
  std::vector<cv::Mat> rows;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    cv::Mat row;
    cv::hconcat(std::vector<cv::Mat>{prepare(inputs[i]), prepare(references[i]), prepare(predictions[i])}, row);
    rows.push_back(row);
  }
  cv::Mat grid;
  cv::vconcat(rows, grid);
  write_image(out, grid);
}

}  // namespace fss
