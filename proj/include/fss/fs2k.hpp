#pragma once

// FS2K dataset model: annotations, manifest, split statistics and pair loading.
//
// On-disk layout under a dataset root:
//   photo/<image_name>.{png,jpg,jpeg}
//   sketch/<image_name>.{png,jpg,jpeg}
//   anno_train.json, anno_test.json   (one JSON array of records per split)
//
// Record schema (all fields required unless noted):
//   image_name   string, path stem relative to photo/ and sketch/
//   style        integer 1..3
//   gender       "male" | "female"
//   smile, frontal_face, has_hair, earring   booleans
//   hair_color   "brown" | "black" | "red" | "golden"; present iff has_hair
//   skin_patch   [x1, y1, x2, y2] pixel rectangle in the photo, x1 < x2, y1 < y2
//   lip_color, eye_color   [r, g, b] mean values in [0, 255]

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <opencv2/core.hpp>

#include "fss/image.hpp"

namespace fss {

enum class Gender { male, female };
enum class HairColor { brown, black, red, golden };
enum class Style { style1 = 1, style2 = 2, style3 = 3 };
enum class Split { train, test };

std::string to_string(Gender g);
std::string to_string(HairColor h);
std::string to_string(Split s);
Split parse_split(std::string_view text);
Style style_from_int(int label);
inline int style_index(Style s) { return static_cast<int>(s) - 1; }

/// Half-open pixel rectangle [x1, x2) x [y1, y2).
struct PixelRect {
  int x1 = 0;
  int y1 = 0;
  int x2 = 0;
  int y2 = 0;

  int width() const { return x2 - x1; }
  int height() const { return y2 - y1; }
  bool degenerate() const { return width() <= 0 || height() <= 0; }
  bool inside(int image_width, int image_height) const {
    return x1 >= 0 && y1 >= 0 && x2 <= image_width && y2 <= image_height;
  }
  auto operator<=>(const PixelRect&) const = default;
};

using MeanRgb = std::array<double, 3>;

struct FaceAttributes {
  Gender gender = Gender::male;
  bool smile = false;
  bool frontal_face = true;
  bool has_hair = true;
  std::optional<HairColor> hair_color = HairColor::black;
  bool earring = false;
  PixelRect skin_patch;
  MeanRgb lip_color{};
  MeanRgb eye_color{};

  bool operator==(const FaceAttributes&) const = default;
};

struct ManifestEntry {
  std::string pair_id;
  std::filesystem::path photo_file;
  std::filesystem::path sketch_file;
  FaceAttributes attributes;
  Style style = Style::style1;
  Split split = Split::train;

  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;
  /// Non-fatal findings (unknown annotation fields). Not part of equality.
  std::vector<std::string> warnings;

  std::vector<const ManifestEntry*> entries_in(Split split) const;
  const ManifestEntry& find(std::string_view pair_id) const;

  bool operator==(const DatasetManifest& other) const {
    return root == other.root && entries == other.entries;
  }
};

/// One loaded sample. photo is RGB 8-bit, sketch single-channel 8-bit.
struct PhotoSketchPair {
  std::string pair_id;
  cv::Mat photo;
  cv::Mat sketch;
  Style style = Style::style1;
  FaceAttributes attributes;
  Split split = Split::train;
  /// Set when the images were letterboxed to a training resolution.
  std::optional<Letterbox> transform;
};

struct LoadOptions {
  /// Square training resolution; unset keeps the native size.
  std::optional<int> resolution;
};

/// Column keys of the attribute table, in canonical order (17 entries).
const std::vector<std::string>& attribute_keys();

/// Keys (from attribute_keys()) a sample with these attributes/style is counted under.
std::vector<std::string> keys_for(const FaceAttributes& attributes, Style style);

/// Per-attribute counts for one split, keyed by attribute_keys().
struct SplitStats {
  Split split = Split::train;
  std::size_t total = 0;
  std::vector<std::pair<std::string, std::size_t>> counts;

  std::size_t at(std::string_view key) const;
};

DatasetManifest load_manifest(const std::filesystem::path& root);

/// Writes anno_train.json / anno_test.json for the manifest into manifest.root.
void serialize_manifest(const DatasetManifest& manifest);

SplitStats compute_split_stats(const DatasetManifest& manifest, Split split);
SplitStats compute_split_stats(const DatasetManifest& manifest, std::string_view split);

PhotoSketchPair load_pair(const ManifestEntry& entry, const LoadOptions& options = {});

/// Yields each pair of a split exactly once, loading images lazily.
class PairStream {
 public:
  PairStream(const DatasetManifest& manifest, Split split, std::optional<std::uint64_t> shuffle_seed,
             LoadOptions options = {});

  std::optional<PhotoSketchPair> next();
  std::size_t size() const { return order_.size(); }
  std::vector<std::string> pair_ids() const;

 private:
  std::vector<const ManifestEntry*> order_;
  std::size_t cursor_ = 0;
  LoadOptions options_;
};

PairStream iterate_split(const DatasetManifest& manifest, Split split,
                         std::optional<std::uint64_t> shuffle_seed = std::nullopt,
                         LoadOptions options = {});

/// Deterministic Fisher-Yates permutation of 0..n-1 driven by mt19937_64.
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

/// Crop of the annotated skin patch (mapped through the letterbox if resized).
cv::Mat load_skin_patch(const PhotoSketchPair& pair);

}  // namespace fss
