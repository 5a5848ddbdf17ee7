#include "fss/fs2k.hpp"

#include <fstream>
#include <random>
#include <set>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "fss/error.hpp"

namespace fss {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Gender g) { return g == Gender::male ? "male" : "female"; }

std::string to_string(HairColor h) {
  switch (h) {
    case HairColor::brown: return "brown";
    case HairColor::black: return "black";
    case HairColor::red: return "red";
    case HairColor::golden: return "golden";
  }
  return "?";
}

std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "test") return Split::test;
  throw DataError("unknown split '" + std::string(text) + "' (expected train or test)");
}

Style style_from_int(int label) {
  if (label < 1 || label > 3) throw ConfigError("style label must be 1, 2 or 3, got " + std::to_string(label));
  return static_cast<Style>(label);
}

const std::vector<std::string>& attribute_keys() {
  static const std::vector<std::string> keys = {
      "w/ H", "w/o H", "H(b)", "H(bl)", "H(r)", "H(g)", "M", "F", "w/ E",
      "w/o E", "w/ S", "w/o S", "w/ F", "w/o F", "S1", "S2", "S3"};
  return keys;
}

std::vector<std::string> keys_for(const FaceAttributes& a, Style style) {
  std::vector<std::string> keys;
  keys.emplace_back(a.has_hair ? "w/ H" : "w/o H");
  if (a.has_hair && a.hair_color) {
    switch (*a.hair_color) {
      case HairColor::brown: keys.emplace_back("H(b)"); break;
      case HairColor::black: keys.emplace_back("H(bl)"); break;
      case HairColor::red: keys.emplace_back("H(r)"); break;
      case HairColor::golden: keys.emplace_back("H(g)"); break;
    }
  }
  keys.emplace_back(a.gender == Gender::male ? "M" : "F");
  keys.emplace_back(a.earring ? "w/ E" : "w/o E");
  keys.emplace_back(a.smile ? "w/ S" : "w/o S");
  keys.emplace_back(a.frontal_face ? "w/ F" : "w/o F");
  keys.emplace_back("S" + std::to_string(static_cast<int>(style)));
  return keys;
}

std::size_t SplitStats::at(std::string_view key) const {
  for (const auto& [k, n] : counts) {
    if (k == key) return n;
  }
  throw DataError("no attribute key '" + std::string(key) + "'");
}

std::vector<const ManifestEntry*> DatasetManifest::entries_in(Split split) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries) {
    if (e.split == split) out.push_back(&e);
  }
  return out;
}

const ManifestEntry& DatasetManifest::find(std::string_view pair_id) const {
  for (const auto& e : entries) {
    if (e.pair_id == pair_id) return e;
  }
  throw DataError("no pair '" + std::string(pair_id) + "' in manifest");
}

namespace {

const char* kAnnotationFiles[] = {"anno_train.json", "anno_test.json"};
const std::set<std::string> kKnownFields = {
    "image_name", "style", "gender", "smile", "frontal_face", "has_hair",
    "hair_color", "earring", "skin_patch", "lip_color", "eye_color"};

std::optional<fs::path> find_image(const fs::path& dir, const std::string& stem) {
  const fs::path direct = dir / stem;
  if (direct.has_extension() && fs::is_regular_file(direct)) return direct;
  for (const char* ext : {".png", ".jpg", ".jpeg"}) {
    fs::path candidate = dir / (stem + ext);
    if (fs::is_regular_file(candidate)) return candidate;
  }
  return std::nullopt;
}

class RecordReader {
 public:
  RecordReader(const json& record, std::string where) : record_(record), where_(std::move(where)) {}

  const json& field(const char* name) const {
    auto it = record_.find(name);
    if (it == record_.end()) throw SchemaError(path(name), "missing field");
    return *it;
  }

  bool boolean(const char* name) const {
    const json& v = field(name);
    // 0/1 integers are accepted alongside true/false.
    if (v.is_boolean()) return v.get<bool>();
    if (v.is_number_integer() && (v.get<int>() == 0 || v.get<int>() == 1)) return v.get<int>() == 1;
    throw SchemaError(path(name), "expected boolean");
  }

  std::string string(const char* name) const {
    const json& v = field(name);
    if (!v.is_string()) throw SchemaError(path(name), "expected string");
    return v.get<std::string>();
  }

  int integer(const char* name) const {
    const json& v = field(name);
    if (!v.is_number_integer()) throw SchemaError(path(name), "expected integer");
    return v.get<int>();
  }

  template <std::size_t N>
  std::array<double, N> numbers(const char* name) const {
    const json& v = field(name);
    if (!v.is_array() || v.size() != N) {
      throw SchemaError(path(name), "expected array of " + std::to_string(N) + " numbers");
    }
    std::array<double, N> out{};
    for (std::size_t i = 0; i < N; ++i) {
      if (!v[i].is_number()) throw SchemaError(path(name) + "[" + std::to_string(i) + "]", "expected number");
      out[i] = v[i].get<double>();
    }
    return out;
  }

  std::string path(const std::string& name) const { return where_ + "." + name; }

 private:
  const json& record_;
  std::string where_;
};

HairColor parse_hair_color(const std::string& text, const std::string& where) {
  if (text == "brown") return HairColor::brown;
  if (text == "black") return HairColor::black;
  if (text == "red") return HairColor::red;
  if (text == "golden") return HairColor::golden;
  throw SchemaError(where, "unknown hair color '" + text + "'");
}

MeanRgb parse_rgb(const RecordReader& r, const char* name) {
  auto rgb = r.numbers<3>(name);
  for (std::size_t i = 0; i < 3; ++i) {
    if (rgb[i] < 0.0 || rgb[i] > 255.0) {
      throw SchemaError(r.path(name) + "[" + std::to_string(i) + "]", "RGB component outside [0, 255]");
    }
  }
  return rgb;
}

ManifestEntry parse_record(const json& record, const fs::path& root, Split split, const std::string& where,
                           std::vector<std::string>& warnings) {
  if (!record.is_object()) throw SchemaError(where, "expected object");
  RecordReader r(record, where);
  ManifestEntry e;
  e.split = split;
  e.pair_id = r.string("image_name");
  if (e.pair_id.empty()) throw SchemaError(r.path("image_name"), "empty image name");

  const int style = r.integer("style");
  if (style < 1 || style > 3) throw SchemaError(r.path("style"), "style must be 1, 2 or 3");
  e.style = static_cast<Style>(style);

  auto& a = e.attributes;
  const std::string gender = r.string("gender");
  if (gender == "male") {
    a.gender = Gender::male;
  } else if (gender == "female") {
    a.gender = Gender::female;
  } else {
    throw SchemaError(r.path("gender"), "expected \"male\" or \"female\"");
  }
  a.smile = r.boolean("smile");
  a.frontal_face = r.boolean("frontal_face");
  a.has_hair = r.boolean("has_hair");
  a.earring = r.boolean("earring");

  auto hc = record.find("hair_color");
  const bool hair_color_present = hc != record.end() && !hc->is_null();
  if (a.has_hair != hair_color_present) {
    throw SchemaError(r.path("hair_color"), a.has_hair ? "required when has_hair is true"
                                                       : "must be absent when has_hair is false");
  }
  a.hair_color = std::nullopt;
  if (hair_color_present) {
    if (!hc->is_string()) throw SchemaError(r.path("hair_color"), "expected string");
    a.hair_color = parse_hair_color(hc->get<std::string>(), r.path("hair_color"));
  }

  const auto patch = r.numbers<4>("skin_patch");
  a.skin_patch = PixelRect{static_cast<int>(patch[0]), static_cast<int>(patch[1]), static_cast<int>(patch[2]),
                           static_cast<int>(patch[3])};
  if (a.skin_patch.degenerate() || a.skin_patch.x1 < 0 || a.skin_patch.y1 < 0) {
    throw SchemaError(r.path("skin_patch"), "expected 0 <= x1 < x2 and 0 <= y1 < y2");
  }
  a.lip_color = parse_rgb(r, "lip_color");
  a.eye_color = parse_rgb(r, "eye_color");

  for (const auto& [key, value] : record.items()) {
    if (!kKnownFields.contains(key)) warnings.push_back(r.path(key) + ": unknown field ignored");
  }

  auto photo = find_image(root / "photo", e.pair_id);
  if (!photo) throw LoadError(e.pair_id, "pair '" + e.pair_id + "': photo file missing under " + (root / "photo").string());
  auto sketch = find_image(root / "sketch", e.pair_id);
  if (!sketch) throw LoadError(e.pair_id, "pair '" + e.pair_id + "': sketch file missing under " + (root / "sketch").string());
  e.photo_file = *photo;
  e.sketch_file = *sketch;
  return e;
}

json rgb_json(const MeanRgb& c) { return json::array({c[0], c[1], c[2]}); }

json record_json(const ManifestEntry& e) {
  const auto& a = e.attributes;
  json j;
  j["image_name"] = e.pair_id;
  j["style"] = static_cast<int>(e.style);
  j["gender"] = to_string(a.gender);
  j["smile"] = a.smile;
  j["frontal_face"] = a.frontal_face;
  j["has_hair"] = a.has_hair;
  if (a.hair_color) j["hair_color"] = to_string(*a.hair_color);
  j["earring"] = a.earring;
  j["skin_patch"] = json::array({a.skin_patch.x1, a.skin_patch.y1, a.skin_patch.x2, a.skin_patch.y2});
  j["lip_color"] = rgb_json(a.lip_color);
  j["eye_color"] = rgb_json(a.eye_color);
  return j;
}

}  // namespace

DatasetManifest load_manifest(const fs::path& root) {
  if (!fs::is_directory(root)) throw DataError("dataset root " + root.string() + " is not a directory");
  DatasetManifest manifest;
  manifest.root = root;
  std::unordered_set<std::string> seen;
  for (Split split : {Split::train, Split::test}) {
    const std::string file_name = kAnnotationFiles[static_cast<int>(split)];
    const fs::path file = root / file_name;
    std::ifstream in(file);
    if (!in) throw DataError("annotation file " + file.string() + " missing");
    json doc;
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& err) {
      throw SchemaError(file_name, std::string("invalid JSON: ") + err.what());
    }
    if (!doc.is_array()) throw SchemaError(file_name, "expected a JSON array of records");
    for (std::size_t i = 0; i < doc.size(); ++i) {
      const std::string where = file_name + "[" + std::to_string(i) + "]";
      ManifestEntry e = parse_record(doc[i], root, split, where, manifest.warnings);
      if (!seen.insert(e.pair_id).second) {
        throw SchemaError(where + ".image_name", "duplicate pair id '" + e.pair_id + "'");
      }
      manifest.entries.push_back(std::move(e));
    }
  }
  return manifest;
}

void serialize_manifest(const DatasetManifest& manifest) {
  fs::create_directories(manifest.root);
  for (Split split : {Split::train, Split::test}) {
    json doc = json::array();
    for (const auto* e : manifest.entries_in(split)) doc.push_back(record_json(*e));
    std::ofstream out(manifest.root / kAnnotationFiles[static_cast<int>(split)]);
    if (!out) throw DataError("cannot write annotations under " + manifest.root.string());
    out << doc.dump(1) << '\n';
  }
}

SplitStats compute_split_stats(const DatasetManifest& manifest, Split split) {
  SplitStats stats;
  stats.split = split;
  for (const auto& key : attribute_keys()) stats.counts.emplace_back(key, 0);
  for (const auto* e : manifest.entries_in(split)) {
    ++stats.total;
    for (const auto& key : keys_for(e->attributes, e->style)) {
      for (auto& [k, n] : stats.counts) {
        if (k == key) ++n;
      }
    }
  }
  return stats;
}

SplitStats compute_split_stats(const DatasetManifest& manifest, std::string_view split) {
  return compute_split_stats(manifest, parse_split(split));
}

PhotoSketchPair load_pair(const ManifestEntry& entry, const LoadOptions& options) {
  PhotoSketchPair pair;
  pair.pair_id = entry.pair_id;
  pair.style = entry.style;
  pair.attributes = entry.attributes;
  pair.split = entry.split;
  try {
    pair.photo = read_image(entry.photo_file, 3);
    pair.sketch = read_image(entry.sketch_file, 1);
  } catch (const DataError& err) {
    throw LoadError(entry.pair_id, "pair '" + entry.pair_id + "': " + err.what());
  }
  if (pair.photo.size() != pair.sketch.size()) {
    throw LoadError(entry.pair_id, "pair '" + entry.pair_id + "': photo and sketch dimensions differ");
  }
  if (!entry.attributes.skin_patch.inside(pair.photo.cols, pair.photo.rows)) {
    throw SchemaError(entry.pair_id + ".skin_patch", "rectangle exceeds photo bounds");
  }
  if (options.resolution) {
    Letterbox transform;
    pair.photo = letterbox(pair.photo, *options.resolution, 0, &transform);
    pair.sketch = letterbox(pair.sketch, *options.resolution, 255);
    pair.transform = transform;
  }
  return pair;
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

PairStream::PairStream(const DatasetManifest& manifest, Split split, std::optional<std::uint64_t> shuffle_seed,
                       LoadOptions options)
    : options_(options) {
  auto entries = manifest.entries_in(split);
  if (shuffle_seed) {
    for (std::size_t idx : seeded_permutation(entries.size(), *shuffle_seed)) order_.push_back(entries[idx]);
  } else {
    order_ = std::move(entries);
  }
}

std::optional<PhotoSketchPair> PairStream::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  return load_pair(*order_[cursor_++], options_);
}

std::vector<std::string> PairStream::pair_ids() const {
  std::vector<std::string> ids;
  ids.reserve(order_.size());
  for (const auto* e : order_) ids.push_back(e->pair_id);
  return ids;
}

PairStream iterate_split(const DatasetManifest& manifest, Split split, std::optional<std::uint64_t> shuffle_seed,
                         LoadOptions options) {
  return PairStream(manifest, split, shuffle_seed, options);
}

cv::Mat load_skin_patch(const PhotoSketchPair& pair) {
  PixelRect r = pair.attributes.skin_patch;
  if (r.degenerate()) throw GeometryError("skin patch of pair '" + pair.pair_id + "' has zero area");
  if (pair.transform) {
    const auto p1 = pair.transform->map({static_cast<double>(r.x1), static_cast<double>(r.y1)});
    const auto p2 = pair.transform->map({static_cast<double>(r.x2), static_cast<double>(r.y2)});
    r = PixelRect{static_cast<int>(std::floor(p1.x)), static_cast<int>(std::floor(p1.y)),
                  static_cast<int>(std::ceil(p2.x)), static_cast<int>(std::ceil(p2.y))};
    if (r.degenerate()) throw GeometryError("skin patch of pair '" + pair.pair_id + "' vanishes after resizing");
  }
  if (!r.inside(pair.photo.cols, pair.photo.rows)) {
    throw GeometryError("skin patch of pair '" + pair.pair_id + "' extends past the photo border");
  }
  return pair.photo(cv::Rect(r.x1, r.y1, r.width(), r.height())).clone();
}

}  // namespace fss
