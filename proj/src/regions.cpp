#include "fss/regions.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>
#include <opencv2/imgproc.hpp>
#include <opencv2/objdetect.hpp>

#include "fss/error.hpp"

namespace fss {

using nlohmann::json;

std::string to_string(Part part) {
  switch (part) {
    case Part::left_eye: return "left_eye";
    case Part::right_eye: return "right_eye";
    case Part::nose: return "nose";
    case Part::mouth: return "mouth";
    case Part::rest: return "rest";
  }
  return "?";
}

RegionConfig RegionConfig::for_resolution(int resolution) const {
  if (resolution <= 0) throw ConfigError("resolution must be positive");
  RegionConfig scaled = *this;
  auto round8 = [&](int v) {
    const double s = static_cast<double>(v) * resolution / base_resolution;
    return std::max(8, static_cast<int>(std::lround(s / 8.0)) * 8);
  };
  for (auto& w : scaled.windows) w = cv::Size(round8(w.width), round8(w.height));
  scaled.base_resolution = resolution;
  return scaled;
}

void RegionConfig::validate() const {
  for (const auto& w : windows) {
    if (w.width <= 0 || w.height <= 0) throw ConfigError("region window sizes must be positive");
  }
  if (paste_order[0] != Part::rest) throw ConfigError("paste order must start with rest");
  std::array<bool, kPartCount> seen{};
  for (Part p : paste_order) {
    auto& s = seen.at(static_cast<std::size_t>(p));
    if (s) throw ConfigError("paste order repeats " + to_string(p));
    s = true;
  }
}

RegionBox clamp_box(RegionBox box, int image_width, int image_height) {
  if (box.width <= 0 || box.height <= 0) throw GeometryError("region box has zero size");
  if (box.width > image_width || box.height > image_height) {
    throw GeometryError("region box larger than the image");
  }
  const int x0 = std::clamp(box.cx - box.width / 2, 0, image_width - box.width);
  const int y0 = std::clamp(box.cy - box.height / 2, 0, image_height - box.height);
  box.cx = x0 + box.width / 2;
  box.cy = y0 + box.height / 2;
  return box;
}

cv::Rect window_rect(const FaceRegions& regions, Part part, const RegionConfig& config) {
  if (part == Part::rest) return {0, 0, regions.image_width, regions.image_height};
  const RegionBox& box = regions[part];
  if (box.width <= 0 || box.height <= 0) throw GeometryError(to_string(part) + " box has zero size");
  if (box.cx < 0 || box.cy < 0 || box.cx >= regions.image_width || box.cy >= regions.image_height) {
    throw GeometryError(to_string(part) + " box center lies outside the image");
  }
  const cv::Size size = config.window(part);
  RegionBox window = clamp_box(RegionBox{box.cx, box.cy, size.width, size.height}, regions.image_width,
                               regions.image_height);
  return {window.cx - size.width / 2, window.cy - size.height / 2, size.width, size.height};
}

FaceRegions map_regions(const FaceRegions& regions, const Letterbox& t) {
  FaceRegions out;
  out.image_width = t.size;
  out.image_height = t.size;
  for (std::size_t i = 0; i < out.boxes.size(); ++i) {
    const RegionBox& b = regions.boxes[i];
    const auto c = t.map({static_cast<double>(b.cx), static_cast<double>(b.cy)});
    RegionBox mapped{static_cast<int>(std::lround(c.x)), static_cast<int>(std::lround(c.y)),
                     std::max(1, static_cast<int>(std::lround(b.width * t.scale))),
                     std::max(1, static_cast<int>(std::lround(b.height * t.scale)))};
    out.boxes[i] = clamp_box(mapped, t.size, t.size);
  }
  return out;
}

namespace {

void check_dims(const FaceRegions& regions, int height, int width) {
  if (regions.image_height != height || regions.image_width != width) {
    throw GeometryError("regions were computed for " + std::to_string(regions.image_width) + "x" +
                        std::to_string(regions.image_height) + " but the image is " + std::to_string(width) +
                        "x" + std::to_string(height));
  }
}

}  // namespace

ImageParts split_parts(const cv::Mat& image, const FaceRegions& regions, const RegionConfig& config) {
  if (image.empty()) throw GeometryError("split_parts: empty image");
  check_dims(regions, image.rows, image.cols);
  ImageParts parts;
  cv::Mat rest = image.clone();
  for (Part p : kKeyParts) {
    const cv::Rect r = window_rect(regions, p, config);
    parts[p] = image(r).clone();
    rest(r).setTo(cv::Scalar::all(config.mask_value));
  }
  parts[Part::rest] = rest;
  return parts;
}

cv::Mat stitch_parts(const ImageParts& parts, const FaceRegions& regions, const RegionConfig& config) {
  const cv::Mat& rest = parts[Part::rest];
  if (rest.empty()) throw GeometryError("stitch_parts: missing rest part");
  check_dims(regions, rest.rows, rest.cols);
  cv::Mat out;
  for (Part p : config.paste_order) {
    if (p == Part::rest) {
      out = rest.clone();
      continue;
    }
    const cv::Rect r = window_rect(regions, p, config);
    const cv::Mat& patch = parts[p];
    if (patch.size() != r.size() || patch.type() != rest.type()) {
      throw GeometryError("stitch_parts: " + to_string(p) + " patch does not match its window");
    }
    patch.copyTo(out(r));
  }
  return out;
}

TensorParts split_parts(const torch::Tensor& image, const FaceRegions& regions, const RegionConfig& config,
                        double mask_value) {
  if (image.dim() != 4) throw ShapeError("split_parts expects [N,C,H,W]");
  check_dims(regions, static_cast<int>(image.size(2)), static_cast<int>(image.size(3)));
  TensorParts parts;
  auto rest = image.clone();
  for (Part p : kKeyParts) {
    const cv::Rect r = window_rect(regions, p, config);
    parts[p] = image.narrow(2, r.y, r.height).narrow(3, r.x, r.width);
    rest.narrow(2, r.y, r.height).narrow(3, r.x, r.width).fill_(mask_value);
  }
  parts[Part::rest] = rest;
  return parts;
}

torch::Tensor stitch_parts(const TensorParts& parts, const FaceRegions& regions, const RegionConfig& config) {
  const auto& rest = parts[Part::rest];
  if (!rest.defined() || rest.dim() != 4) throw ShapeError("stitch_parts expects a [N,C,H,W] rest part");
  check_dims(regions, static_cast<int>(rest.size(2)), static_cast<int>(rest.size(3)));
  torch::Tensor out;
  for (Part p : config.paste_order) {
    if (p == Part::rest) {
      out = rest.clone();
      continue;
    }
    const cv::Rect r = window_rect(regions, p, config);
    const auto& patch = parts[p];
    if (!patch.defined() || patch.dim() != 4 || patch.size(0) != rest.size(0) || patch.size(1) != rest.size(1) ||
        patch.size(2) != r.height || patch.size(3) != r.width) {
      throw GeometryError("stitch_parts: " + to_string(p) + " patch does not match its window");
    }
    out.narrow(2, r.y, r.height).narrow(3, r.x, r.width).copy_(patch);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Detectors
// ---------------------------------------------------------------------------

namespace {

RegionBox box_from_json(const json& j, const std::string& where) {
  try {
    return RegionBox{j.at("cx").get<int>(), j.at("cy").get<int>(), j.at("w").get<int>(), j.at("h").get<int>()};
  } catch (const json::exception& err) {
    throw SchemaError(where, std::string("expected {cx, cy, w, h}: ") + err.what());
  }
}

}  // namespace

FixtureDetector::FixtureDetector(const std::filesystem::path& fixture_file) {
  std::ifstream in(fixture_file);
  if (!in) throw DataError("region fixture " + fixture_file.string() + " missing");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& err) {
    throw SchemaError(fixture_file.filename().string(), std::string("invalid JSON: ") + err.what());
  }
  if (!doc.is_object()) throw SchemaError(fixture_file.filename().string(), "expected an object keyed by pair id");
  for (const auto& [pair_id, entry] : doc.items()) {
    std::array<RegionBox, 4> boxes{};
    for (Part p : kKeyParts) {
      const std::string name = to_string(p);
      if (!entry.contains(name)) throw SchemaError(pair_id + "." + name, "missing box");
      boxes[static_cast<std::size_t>(p)] = box_from_json(entry[name], pair_id + "." + name);
    }
    boxes_.emplace(pair_id, boxes);
  }
}

FixtureDetector::FixtureDetector(std::map<std::string, std::array<RegionBox, 4>> boxes) : boxes_(std::move(boxes)) {}

void FixtureDetector::write(const std::filesystem::path& file,
                            const std::map<std::string, std::array<RegionBox, 4>>& boxes) {
  json doc = json::object();
  for (const auto& [pair_id, b] : boxes) {
    json entry;
    for (Part p : kKeyParts) {
      const auto& box = b[static_cast<std::size_t>(p)];
      entry[to_string(p)] = {{"cx", box.cx}, {"cy", box.cy}, {"w", box.width}, {"h", box.height}};
    }
    doc[pair_id] = entry;
  }
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw Error("cannot write region fixture " + file.string());
  out << doc.dump(1) << '\n';
}

FaceRegions FixtureDetector::detect(const cv::Mat& photo, const std::string& pair_id) const {
  if (photo.empty()) throw DetectionError("empty photo");
  auto it = boxes_.find(pair_id);
  if (it == boxes_.end()) throw DataError("region fixture has no entry for pair '" + pair_id + "'");
  FaceRegions regions;
  regions.image_width = photo.cols;
  regions.image_height = photo.rows;
  for (std::size_t i = 0; i < regions.boxes.size(); ++i) {
    regions.boxes[i] = clamp_box(it->second[i], photo.cols, photo.rows);
  }
  return regions;
}

ExternalDetector::ExternalDetector(LandmarkFn landmarks, RegionConfig config)
    : landmarks_(std::move(landmarks)), config_(std::move(config)) {
  if (!landmarks_) throw ConfigError("external detector needs a landmark function");
}

ExternalDetector ExternalDetector::from_cascade(const std::filesystem::path& cascade_xml, RegionConfig config) {
  auto cascade = std::make_shared<cv::CascadeClassifier>();
  if (!cascade->load(cascade_xml.string())) {
    throw ConfigError("cannot load face cascade " + cascade_xml.string());
  }
  auto fn = [cascade](const cv::Mat& photo) -> std::optional<FaceLandmarks> {
    cv::Mat gray;
    if (photo.channels() == 3) {
      cv::cvtColor(photo, gray, cv::COLOR_RGB2GRAY);
    } else {
      gray = photo;
    }
    std::vector<cv::Rect> faces;
    cascade->detectMultiScale(gray, faces, 1.1, 3, 0, cv::Size(24, 24));
    if (faces.empty()) return std::nullopt;
    const cv::Rect f = *std::max_element(faces.begin(), faces.end(),
                                         [](const cv::Rect& a, const cv::Rect& b) { return a.area() < b.area(); });
    auto at = [&](double u, double v) { return cv::Point2d(f.x + u * f.width, f.y + v * f.height); };
    // Canonical landmark positions within a frontal face box.
    return FaceLandmarks{at(0.30, 0.38), at(0.70, 0.38), at(0.50, 0.58), at(0.35, 0.77), at(0.65, 0.77)};
  };
  return ExternalDetector(std::move(fn), std::move(config));
}

FaceRegions ExternalDetector::detect(const cv::Mat& photo, const std::string& pair_id) const {
  if (photo.empty()) throw DetectionError("empty photo");
  cv::Scalar mean;
  cv::Scalar stddev;
  cv::meanStdDev(photo, mean, stddev);
  bool uniform = true;
  for (int c = 0; c < photo.channels(); ++c) uniform = uniform && stddev[c] == 0.0;
  std::optional<FaceLandmarks> marks;
  if (!uniform) marks = landmarks_(photo);
  if (!marks) {
    throw DetectionError("no face found" + (pair_id.empty() ? std::string() : " in pair '" + pair_id + "'"));
  }
  const double scale = static_cast<double>(std::min(photo.rows, photo.cols)) / config_.base_resolution;
  auto box_at = [&](cv::Point2d c, Part p) {
    const cv::Size w = config_.window(p);
    RegionBox b{static_cast<int>(std::lround(c.x)), static_cast<int>(std::lround(c.y)),
                std::max(1, static_cast<int>(std::lround(w.width * scale))),
                std::max(1, static_cast<int>(std::lround(w.height * scale)))};
    return clamp_box(b, photo.cols, photo.rows);
  };
  FaceRegions regions;
  regions.image_width = photo.cols;
  regions.image_height = photo.rows;
  regions[Part::left_eye] = box_at(marks->left_eye, Part::left_eye);
  regions[Part::right_eye] = box_at(marks->right_eye, Part::right_eye);
  regions[Part::nose] = box_at(marks->nose, Part::nose);
  regions[Part::mouth] = box_at((marks->mouth_left + marks->mouth_right) * 0.5, Part::mouth);
  return regions;
}

std::unique_ptr<LandmarkDetector> make_detector(DetectorKind kind, const DetectorSettings& settings) {
  if (kind == DetectorKind::fixture_file) return std::make_unique<FixtureDetector>(settings.fixture_file);
  if (settings.cascade_file.empty()) throw ConfigError("external detector requires a cascade model file");
  return std::make_unique<ExternalDetector>(ExternalDetector::from_cascade(settings.cascade_file, settings.config));
}

FaceRegions detect_regions(const cv::Mat& photo, const LandmarkDetector& detector, const std::string& pair_id) {
  if (photo.empty()) throw DetectionError("empty photo");
  return detector.detect(photo, pair_id);
}

}  // namespace fss
