#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "fss/fs2k.hpp"
#include "fss/regions.hpp"
#include "fss/trainer.hpp"

namespace fss::testing {

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

struct FixtureDataset {
  DatasetManifest manifest;
  std::map<std::string, std::array<RegionBox, 4>> regions;
  std::filesystem::path regions_file;
};

/// Writes a small FS2K-layout dataset of drawn faces (photo + matching line sketch)
/// with annotations and a region fixture file. Attributes cycle so every slice is hit.
FixtureDataset make_fixture_dataset(const std::filesystem::path& root, int n_train, int n_test, int width,
                                    int height, std::uint64_t seed = 7);

/// Key-region boxes of a drawn face of the given size.
std::array<RegionBox, 4> drawn_face_regions(int width, int height);

/// Annotation-only dataset whose split statistics follow the published attribute table.
/// Images are 16x16 placeholders.
DatasetManifest make_table3_dataset(const std::filesystem::path& root);

/// Training config small enough for CPU tests at 64x64.
TrainConfig tiny_config(Task task);

}  // namespace fss::testing
