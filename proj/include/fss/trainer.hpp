#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "fss/fs2k.hpp"
#include "fss/losses.hpp"
#include "fss/networks.hpp"
#include "fss/regions.hpp"

namespace fss {

struct AblationFlags {
  bool use_multi_patch = true;
  bool use_style_vector = true;
  bool operator==(const AblationFlags&) const = default;
};

inline constexpr int kConfigVersion = 1;

struct TrainConfig {
  Task task = Task::i2s;
  LossWeights stage1_weights;
  LossWeights stage2_weights;
  double lr_generator = 2e-4;
  double lr_discriminator = 2e-4;
  int epochs = 1;
  std::optional<int> freeze_stage1_after;
  int batch_size = 1;
  std::uint64_t seed = 0;
  AblationFlags ablation;
  int resolution = 512;
  int checkpoint_every = 10;
  NetworkConfig network;
  RegionConfig regions;
  /// Optional archive with perceptual extractor weights.
  std::string extractor_weights;

  /// Style conditioning is active only for I2S with the style flag on.
  bool style_enabled() const { return task == Task::i2s && ablation.use_style_vector; }
  /// Whether stage 1 is frozen during the given 0-based epoch.
  bool stage1_frozen(int epoch) const { return freeze_stage1_after && epoch >= *freeze_stage1_after; }
  void validate() const;
};

/// Published hyperparameters for each task.
TrainConfig default_config(Task task);

nlohmann::json config_to_json(const TrainConfig& config);
/// Fields present in `j` override `base`.
TrainConfig config_from_json(const nlohmann::json& j, TrainConfig base);
TrainConfig load_config(const std::filesystem::path& file, TrainConfig base);
void save_config(const TrainConfig& config, const std::filesystem::path& file);
std::string config_hash(const TrainConfig& config);

/// All networks of the two-stage pipeline.
struct FsganModelImpl : torch::nn::Module {
  explicit FsganModelImpl(const TrainConfig& config);

  /// Stage 1: per-part synthesis and stitching. input [1,C,H,W].
  torch::Tensor synthesize_intact(const torch::Tensor& input, const FaceRegions& regions);
  /// Stage 2 on a batch; labels [N] (1..3) required iff style is enabled.
  torch::Tensor refine(const torch::Tensor& stage2_input, const std::optional<torch::Tensor>& style_labels);
  /// Full pipeline for one sample.
  torch::Tensor translate(const torch::Tensor& input, const FaceRegions& regions,
                          const std::optional<int>& style_label);

  std::vector<torch::Tensor> stage1_generator_parameters();
  std::vector<torch::Tensor> stage1_discriminator_parameters();
  std::vector<torch::Tensor> stage2_discriminator_parameters();
  std::uint64_t stage1_hash() const;

  TrainConfig config;
  RegionConfig scaled_regions;
  torch::nn::ModuleList part_generators{nullptr};
  torch::nn::ModuleList part_discriminators{nullptr};
  CoarseToFineGenerator refiner{nullptr};
  MultiScaleDiscriminator discriminator{nullptr};
  StyleClassifier style_classifier{nullptr};
  PerceptualExtractor extractor{nullptr};
};
TORCH_MODULE(FsganModel);

/// One training sample at training resolution.
struct TrainingSample {
  std::string pair_id;
  torch::Tensor input;   // [1,Cin,H,W]
  torch::Tensor target;  // [1,Cout,H,W]
  int style = 1;
  std::optional<FaceRegions> regions;
};

/// Builds a sample from a letterboxed pair; regions given in original photo pixels.
TrainingSample make_sample(const PhotoSketchPair& pair, Task task, const std::optional<FaceRegions>& photo_regions);

struct LossRecord {
  std::int64_t step = 0;
  int epoch = 0;
  double stage1_g = 0.0;
  double stage1_d = 0.0;
  double stage2_g = 0.0;
  double stage2_d = 0.0;
  double adv = 0.0;
  double fm = 0.0;
  double l1 = 0.0;
  double per = 0.0;
  double sty = 0.0;

  bool operator==(const LossRecord&) const = default;
};

std::string loss_csv_header();
std::string loss_csv_row(const LossRecord& r);

/// Model plus optimizers and counters.
struct TrainState {
  explicit TrainState(const TrainConfig& config);

  TrainConfig config;
  FsganModel model{nullptr};
  std::unique_ptr<torch::optim::Adam> stage1_g_opt;
  std::unique_ptr<torch::optim::Adam> stage1_d_opt;
  std::unique_ptr<torch::optim::Adam> stage2_g_opt;
  std::unique_ptr<torch::optim::Adam> stage2_d_opt;
  int epoch = 0;
  std::int64_t step = 0;
};

/// Stage-2 generator objective for one batch; `fake` keeps its graph.
struct GeneratorObjective {
  LossComponents<torch::Tensor> parts;
  torch::Tensor total;
  torch::Tensor fake;
};
GeneratorObjective stage2_generator_objective(FsganModelImpl& model, const TrainConfig& config,
                                              const torch::Tensor& stage2_input, const torch::Tensor& input,
                                              const torch::Tensor& target, const torch::Tensor& labels);

/// One alternating update of stage 1 (unless frozen or disabled), then stage 2.
LossRecord train_step(TrainState& state, const std::vector<TrainingSample>& batch);

inline constexpr int kCheckpointFormatVersion = 1;

void save_checkpoint(const TrainState& state, const std::filesystem::path& file);
/// Restores config, parameters, optimizer state and counters.
std::unique_ptr<TrainState> load_checkpoint(const std::filesystem::path& file);

struct CheckpointRecord {
  std::filesystem::path file;
  int epoch = 0;
  std::int64_t step = 0;
  std::string config_hash;
};

struct TrainRunOptions {
  /// Provides key-region boxes for every pair (required when multi-patch is on).
  const LandmarkDetector* detector = nullptr;
  /// Continue from this checkpoint instead of fresh initialization.
  std::optional<std::filesystem::path> resume_from;
  /// Stop after this many total steps (for smoke runs); unset runs all epochs.
  std::optional<std::int64_t> max_steps;
};

struct TrainRunResult {
  CheckpointRecord final_checkpoint;
  std::filesystem::path loss_curve;
  std::vector<LossRecord> records;
};

TrainRunResult train_run(const DatasetManifest& manifest, const TrainConfig& config,
                         const std::filesystem::path& checkpoint_dir, const TrainRunOptions& options = {});

/// Mean pixel-wise L1 of the full pipeline over samples (no parameter updates).
double evaluate_l1(FsganModel& model, const std::vector<TrainingSample>& samples);

/// Loaded model for translating individual images.
class Translator {
 public:
  explicit Translator(const std::filesystem::path& checkpoint);
  explicit Translator(FsganModel model);

  Task task() const { return model_->config.task; }
  bool style_enabled() const { return model_->config.style_enabled(); }

  /// Translates one image (RGB photo for I2S, grayscale sketch for S2I) and returns
  /// an output at the input's dimensions. `regions` are in input-image pixels.
  cv::Mat infer(const cv::Mat& input, Task task, const std::optional<int>& style,
                const std::optional<FaceRegions>& regions) const;

 private:
  mutable FsganModel model_;
};

}  // namespace fss
