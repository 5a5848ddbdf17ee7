#include "fixture.hpp"

#include <random>

#include <opencv2/imgproc.hpp>

#include "fss/image.hpp"

namespace fss::testing {

namespace fs = std::filesystem;

TempDir::TempDir(const std::string& tag) {
  std::random_device rd;
  path_ = fs::temp_directory_path() / ("fss_" + tag + "_" + std::to_string(rd()));
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

std::array<RegionBox, 4> drawn_face_regions(int w, int h) {
  const int ew = std::max(4, w / 5);
  const int eh = std::max(4, h / 8);
  return {RegionBox{w * 35 / 100, h * 40 / 100, ew, eh}, RegionBox{w * 65 / 100, h * 40 / 100, ew, eh},
          RegionBox{w / 2, h * 55 / 100, w / 6, h / 6}, RegionBox{w / 2, h * 72 / 100, w / 3, h / 8}};
}

namespace {

void draw_face(cv::Mat& photo, cv::Mat& sketch, std::mt19937_64& rng) {
  const int w = photo.cols;
  const int h = photo.rows;
  std::uniform_int_distribution<int> tone(90, 220);
  std::uniform_int_distribution<int> jitter(-2, 2);
  photo.setTo(cv::Scalar(tone(rng) / 3, tone(rng) / 3, tone(rng) / 2));
  sketch.setTo(cv::Scalar(255));
  const cv::Point center(w / 2 + jitter(rng), h / 2 + jitter(rng));
  const cv::Size axes(w * 36 / 100, h * 44 / 100);
  const cv::Scalar skin(tone(rng), tone(rng) * 3 / 4, tone(rng) / 2);
  cv::ellipse(photo, center, axes, 0, 0, 360, skin, cv::FILLED);
  cv::ellipse(sketch, center, axes, 0, 0, 360, cv::Scalar(40), 1);
  // Hair band.
  cv::ellipse(photo, cv::Point(center.x, center.y - h / 4), cv::Size(w * 38 / 100, h / 6), 0, 180, 360,
              cv::Scalar(tone(rng) / 3, tone(rng) / 4, 20), cv::FILLED);
  cv::ellipse(sketch, cv::Point(center.x, center.y - h / 4), cv::Size(w * 38 / 100, h / 6), 0, 180, 360,
              cv::Scalar(70), cv::FILLED);
  const auto boxes = drawn_face_regions(w, h);
  const int r = std::max(2, w / 20);
  for (int e = 0; e < 2; ++e) {
    const cv::Point c(boxes[e].cx + jitter(rng) / 2, boxes[e].cy);
    cv::circle(photo, c, r, cv::Scalar(30, 30, 60), cv::FILLED);
    cv::circle(sketch, c, r, cv::Scalar(0), 1);
  }
  cv::line(photo, cv::Point(boxes[2].cx, boxes[2].cy - h / 14), cv::Point(boxes[2].cx, boxes[2].cy + h / 20),
           cv::Scalar(120, 70, 50), 2);
  cv::line(sketch, cv::Point(boxes[2].cx, boxes[2].cy - h / 14), cv::Point(boxes[2].cx, boxes[2].cy + h / 20),
           cv::Scalar(30), 1);
  cv::ellipse(photo, cv::Point(boxes[3].cx, boxes[3].cy), cv::Size(w / 9, h / 30 + 1), 0, 0, 360,
              cv::Scalar(170, 40, 50), cv::FILLED);
  cv::ellipse(sketch, cv::Point(boxes[3].cx, boxes[3].cy), cv::Size(w / 9, h / 30 + 1), 0, 0, 180, cv::Scalar(10), 1);
}

}  // namespace

FixtureDataset make_fixture_dataset(const fs::path& root, int n_train, int n_test, int width, int height,
                                    std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  FixtureDataset out;
  out.manifest.root = root;
  const HairColor colors[] = {HairColor::brown, HairColor::black, HairColor::red, HairColor::golden};
  for (int i = 0; i < n_train + n_test; ++i) {
    ManifestEntry e;
    e.split = i < n_train ? Split::train : Split::test;
    e.pair_id = "photo" + std::to_string(i % 3 + 1) + "/image" + std::to_string(1000 + i);
    e.style = style_from_int(i % 3 + 1);
    auto& a = e.attributes;
    a.gender = i % 2 == 0 ? Gender::male : Gender::female;
    a.smile = i % 4 < 2;
    a.frontal_face = i % 5 != 0;
    a.has_hair = i % 7 != 6;
    a.hair_color = a.has_hair ? std::optional<HairColor>(colors[i % 4]) : std::nullopt;
    a.earring = i % 3 == 1;
    a.skin_patch = {width / 2 - 4, height / 2 - 4, width / 2 + 4, height / 2 + 4};
    a.lip_color = {150.0 + i, 60.0, 70.0};
    a.eye_color = {40.0, 30.0 + i, 20.0};

    cv::Mat photo(height, width, CV_8UC3);
    cv::Mat sketch(height, width, CV_8UC1);
    draw_face(photo, sketch, rng);
    e.photo_file = root / "photo" / (e.pair_id + ".png");
    e.sketch_file = root / "sketch" / (e.pair_id + ".png");
    write_image(e.photo_file, photo);
    write_image(e.sketch_file, sketch);
    out.regions[e.pair_id] = drawn_face_regions(width, height);
    out.manifest.entries.push_back(std::move(e));
  }
  serialize_manifest(out.manifest);
  out.regions_file = root / "regions.json";
  FixtureDetector::write(out.regions_file, out.regions);
  return out;
}

namespace {

/// Marks the first `k` positions of a seeded shuffle as true.
std::vector<bool> spread(std::size_t n, std::size_t k, std::uint64_t seed) {
  std::vector<bool> flags(n, false);
  const auto order = seeded_permutation(n, seed);
  for (std::size_t i = 0; i < k; ++i) flags[order[i]] = true;
  return flags;
}

struct Table3Row {
  std::size_t total, with_hair, brown, black, red, golden, male, earring, smile, frontal, s1, s2, s3;
};

}  // namespace

DatasetManifest make_table3_dataset(const fs::path& root) {
  const Table3Row rows[2] = {{1058, 1010, 288, 423, 60, 239, 574, 209, 645, 917, 357, 351, 350},
                             {1046, 994, 290, 418, 44, 242, 632, 187, 670, 872, 619, 381, 46}};
  DatasetManifest m;
  m.root = root;
  cv::Mat photo(16, 16, CV_8UC3, cv::Scalar(120, 110, 100));
  cv::Mat sketch(16, 16, CV_8UC1, cv::Scalar(230));
  for (int s = 0; s < 2; ++s) {
    const auto& r = rows[s];
    const auto hair = spread(r.total, r.with_hair, 11 + s);
    const auto male = spread(r.total, r.male, 21 + s);
    const auto earring = spread(r.total, r.earring, 31 + s);
    const auto smile = spread(r.total, r.smile, 41 + s);
    const auto frontal = spread(r.total, r.frontal, 51 + s);
    const auto style_order = seeded_permutation(r.total, 61 + s);
    std::vector<int> style(r.total);
    for (std::size_t i = 0; i < r.total; ++i) {
      const std::size_t rank = style_order[i];
      style[i] = rank < r.s1 ? 1 : rank < r.s1 + r.s2 ? 2 : 3;
    }
    std::vector<HairColor> colors;
    colors.insert(colors.end(), r.brown, HairColor::brown);
    colors.insert(colors.end(), r.black, HairColor::black);
    colors.insert(colors.end(), r.red, HairColor::red);
    colors.insert(colors.end(), r.golden, HairColor::golden);
    std::size_t next_color = 0;
    for (std::size_t i = 0; i < r.total; ++i) {
      ManifestEntry e;
      e.split = s == 0 ? Split::train : Split::test;
      e.pair_id = (s == 0 ? "train/" : "test/") + std::string("image") + std::to_string(i);
      e.style = style_from_int(style[i]);
      e.attributes.gender = male[i] ? Gender::male : Gender::female;
      e.attributes.smile = smile[i];
      e.attributes.frontal_face = frontal[i];
      e.attributes.has_hair = hair[i];
      e.attributes.hair_color = hair[i] ? std::optional<HairColor>(colors[next_color++]) : std::nullopt;
      e.attributes.earring = earring[i];
      e.attributes.skin_patch = {4, 4, 12, 12};
      e.photo_file = root / "photo" / (e.pair_id + ".png");
      e.sketch_file = root / "sketch" / (e.pair_id + ".png");
      write_image(e.photo_file, photo);
      write_image(e.sketch_file, sketch);
      m.entries.push_back(std::move(e));
    }
  }
  serialize_manifest(m);
  return m;
}

TrainConfig tiny_config(Task task) {
  TrainConfig c = default_config(task);
  c.resolution = 64;
  c.epochs = 1;
  c.freeze_stage1_after.reset();
  c.checkpoint_every = 1;
  auto& n = c.network;
  n.base_width = 8;
  n.max_width = 32;
  n.residual_blocks = 2;
  n.global_residual_blocks = 2;
  n.local_residual_blocks = 1;
  n.discriminator_width = 8;
  n.classifier_width = 8;
  n.extractor_widths = {8, 16};
  n.extractor_convs = {1, 1};
  return c;
}

}  // namespace fss::testing
