#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include <opencv2/core.hpp>
#include <torch/torch.h>

#include "fss/image.hpp"

namespace fss {

enum class Part { left_eye = 0, right_eye = 1, nose = 2, mouth = 3, rest = 4 };
inline constexpr std::size_t kPartCount = 5;
inline constexpr std::array<Part, 4> kKeyParts = {Part::left_eye, Part::right_eye, Part::nose, Part::mouth};

std::string to_string(Part part);

/// Axis-aligned box given by its center and extent, in pixels.
struct RegionBox {
  int cx = 0;
  int cy = 0;
  int width = 0;
  int height = 0;

  bool operator==(const RegionBox&) const = default;
};

/// Boxes of the four key regions of one face image.
struct FaceRegions {
  std::array<RegionBox, 4> boxes{};
  int image_height = 0;
  int image_width = 0;

  const RegionBox& operator[](Part p) const { return boxes.at(static_cast<std::size_t>(p)); }
  RegionBox& operator[](Part p) { return boxes.at(static_cast<std::size_t>(p)); }
  bool operator==(const FaceRegions&) const = default;
};

struct RegionConfig {
  /// Window sizes of the key regions (indexed by Part) at `base_resolution`.
  std::array<cv::Size, 4> windows = {cv::Size(128, 128), cv::Size(128, 128), cv::Size(160, 160),
                                     cv::Size(192, 192)};
  int base_resolution = 512;
  /// rest must come first; the remaining four in any order.
  std::array<Part, kPartCount> paste_order = {Part::rest, Part::nose, Part::left_eye, Part::right_eye,
                                              Part::mouth};
  unsigned char mask_value = 128;

  cv::Size window(Part p) const { return windows.at(static_cast<std::size_t>(p)); }

  /// Windows rescaled to a square resolution, rounded to multiples of 8 (minimum 8).
  RegionConfig for_resolution(int resolution) const;

  /// Throws ConfigError unless sizes are positive and paste order is a permutation starting with rest.
  void validate() const;
};

/// Clamped window rectangle of a key part: fixed config size centered at the box center.
cv::Rect window_rect(const FaceRegions& regions, Part part, const RegionConfig& config);

/// Shifts a box so it lies inside the image; size is preserved (throws if it cannot fit).
RegionBox clamp_box(RegionBox box, int image_width, int image_height);

/// Maps regions given in original-photo pixels through a letterbox transform.
FaceRegions map_regions(const FaceRegions& regions, const Letterbox& transform);

/// The five parts, indexed by Part.
template <typename T>
struct Parts {
  std::array<T, kPartCount> items{};
  T& operator[](Part p) { return items.at(static_cast<std::size_t>(p)); }
  const T& operator[](Part p) const { return items.at(static_cast<std::size_t>(p)); }
};

using ImageParts = Parts<cv::Mat>;
using TensorParts = Parts<torch::Tensor>;

ImageParts split_parts(const cv::Mat& image, const FaceRegions& regions, const RegionConfig& config);
cv::Mat stitch_parts(const ImageParts& parts, const FaceRegions& regions, const RegionConfig& config);

/// Tensor variants on [N,C,H,W]; the mask value is given in the tensor's value range.
TensorParts split_parts(const torch::Tensor& image, const FaceRegions& regions, const RegionConfig& config,
                        double mask_value);
torch::Tensor stitch_parts(const TensorParts& parts, const FaceRegions& regions, const RegionConfig& config);

/// Mask value 128 expressed in the [-1,1] tensor range.
inline double tensor_mask_value(const RegionConfig& config) { return config.mask_value / 127.5 - 1.0; }

/// Five facial landmarks in the layout produced by common face detectors.
struct FaceLandmarks {
  cv::Point2d left_eye;
  cv::Point2d right_eye;
  cv::Point2d nose;
  cv::Point2d mouth_left;
  cv::Point2d mouth_right;
};

/// Produces key-region boxes for a photo.
class LandmarkDetector {
 public:
  virtual ~LandmarkDetector() = default;
  virtual FaceRegions detect(const cv::Mat& photo, const std::string& pair_id) const = 0;
};

/// Boxes read from a JSON fixture: {"<pair_id>": {"left_eye": {"cx","cy","w","h"}, ...}}.
class FixtureDetector : public LandmarkDetector {
 public:
  explicit FixtureDetector(const std::filesystem::path& fixture_file);
  explicit FixtureDetector(std::map<std::string, std::array<RegionBox, 4>> boxes);

  FaceRegions detect(const cv::Mat& photo, const std::string& pair_id) const override;
  bool contains(const std::string& pair_id) const { return boxes_.contains(pair_id); }

  /// Writes the fixture format read by the file constructor.
  static void write(const std::filesystem::path& file, const std::map<std::string, std::array<RegionBox, 4>>& boxes);

 private:
  std::map<std::string, std::array<RegionBox, 4>> boxes_;
};

/// Adapter around an external five-point landmark detector.
class ExternalDetector : public LandmarkDetector {
 public:
  using LandmarkFn = std::function<std::optional<FaceLandmarks>(const cv::Mat&)>;

  ExternalDetector(LandmarkFn landmarks, RegionConfig config = {});

  /// Face detection with an OpenCV cascade model; landmarks placed at canonical face proportions.
  static ExternalDetector from_cascade(const std::filesystem::path& cascade_xml, RegionConfig config = {});

  FaceRegions detect(const cv::Mat& photo, const std::string& pair_id) const override;

 private:
  LandmarkFn landmarks_;
  RegionConfig config_;
};

enum class DetectorKind { external_detector, fixture_file };

struct DetectorSettings {
  std::filesystem::path fixture_file;
  std::filesystem::path cascade_file;
  RegionConfig config;
};

std::unique_ptr<LandmarkDetector> make_detector(DetectorKind kind, const DetectorSettings& settings);

/// Runs a detector on one photo.
FaceRegions detect_regions(const cv::Mat& photo, const LandmarkDetector& detector, const std::string& pair_id = "");

}  // namespace fss
