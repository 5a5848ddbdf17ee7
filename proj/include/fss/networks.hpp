#pragma once

// Neural components of the two-stage synthesis pipeline.
//
// All image tensors are [N,C,H,W] in [-1,1]. Normalization layers are batch
// norms without running statistics, so training and inference share the
// same per-batch normalization (with batch size 1 this is per-sample).

#include <cstdint>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace fss {

/// Width/depth hyperparameters shared by every network of a model.
struct NetworkConfig {
  int base_width = 64;
  int max_width = 512;
  int residual_blocks = 9;
  int bottleneck_ratio = 4;
  int component_depth = 3;
  int rest_depth = 4;
  int discriminator_width = 64;
  int discriminator_scales = 2;
  int global_depth = 3;
  int global_residual_blocks = 9;
  int local_depth = 1;
  int local_residual_blocks = 3;
  int classifier_width = 32;
  std::vector<int> extractor_widths = {64, 128, 256, 512, 512};
  std::vector<int> extractor_convs = {2, 2, 3, 3, 3};
  std::uint64_t extractor_seed = 0x5eed;

  bool operator==(const NetworkConfig&) const = default;
};

void to_json(nlohmann::json& j, const NetworkConfig& c);
void from_json(const nlohmann::json& j, NetworkConfig& c);

/// Conv(k3, s2) + BN + ReLU.
struct DownBlockImpl : torch::nn::Module {
  DownBlockImpl(int in_channels, int out_channels);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv{nullptr};
  torch::nn::BatchNorm2d norm{nullptr};
};
TORCH_MODULE(DownBlock);

/// ConvTranspose(k3, s2) + BN + ReLU; exactly doubles the spatial size.
struct UpBlockImpl : torch::nn::Module {
  UpBlockImpl(int in_channels, int out_channels);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::ConvTranspose2d deconv{nullptr};
  torch::nn::BatchNorm2d norm{nullptr};
};
TORCH_MODULE(UpBlock);

/// 1x1 squeeze, 3x3, 1x1 expand with an identity shortcut. Channel preserving.
struct BottleneckBlockImpl : torch::nn::Module {
  BottleneckBlockImpl(int channels, int ratio);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Sequential body{nullptr};
};
TORCH_MODULE(BottleneckBlock);

/// Stem conv, `depth` down blocks, residual trunk, `depth` up blocks, tanh head.
/// Used for the four key-region generators (depth 3) and the rest generator (depth 4).
struct EncoderDecoderGeneratorImpl : torch::nn::Module {
  EncoderDecoderGeneratorImpl(int in_channels, int out_channels, int depth, const NetworkConfig& config);

  torch::Tensor forward(const torch::Tensor& x);
  /// Output of the encoder (input to the residual trunk).
  torch::Tensor encode(const torch::Tensor& x);

  int depth() const { return depth_; }

  torch::nn::Sequential stem{nullptr};
  torch::nn::ModuleList encoder{nullptr};
  torch::nn::Sequential trunk{nullptr};
  torch::nn::ModuleList decoder{nullptr};
  torch::nn::Conv2d head{nullptr};

 private:
  void check_input(const torch::Tensor& x) const;
  int depth_;
  int in_channels_;
};
TORCH_MODULE(EncoderDecoderGenerator);

/// Probability in (0,1) per sample plus the T = 3 intermediate feature taps.
struct DiscriminatorOutput {
  torch::Tensor probability;
  std::vector<torch::Tensor> taps;
};

/// Three stride-2 convolutions, global average pooling, 1x1 conv, sigmoid.
/// The condition and candidate images are concatenated along channels.
struct PatchDiscriminatorImpl : torch::nn::Module {
  PatchDiscriminatorImpl(int in_channels, int width);
  DiscriminatorOutput forward(const torch::Tensor& condition, const torch::Tensor& candidate);

  torch::nn::ModuleList layers{nullptr};
  torch::nn::Conv2d classifier{nullptr};
};
TORCH_MODULE(PatchDiscriminator);

/// K patch discriminators; entry k judges the inputs downsampled k times.
struct MultiScaleDiscriminatorImpl : torch::nn::Module {
  MultiScaleDiscriminatorImpl(int in_channels, int width, int scales);
  std::vector<DiscriminatorOutput> forward(const torch::Tensor& condition, const torch::Tensor& candidate);

  int scales() const { return static_cast<int>(discriminators->size()); }
  torch::nn::ModuleList discriminators{nullptr};
};
TORCH_MODULE(MultiScaleDiscriminator);

/// Coarse-to-fine refinement generator. The global branch sees the half-resolution
/// input; its feature map (optionally concatenated with the expanded style map) is
/// projected onto the local branch's latent and added before the local decoder.
struct CoarseToFineGeneratorImpl : torch::nn::Module {
  CoarseToFineGeneratorImpl(int in_channels, int out_channels, bool use_style, const NetworkConfig& config);

  /// `style` is a [N,3,h,w] expanded style map (any h,w; resized to the latent).
  torch::Tensor forward(const torch::Tensor& intact, const std::optional<torch::Tensor>& style = std::nullopt);

  bool uses_style() const { return use_style_; }
  /// Spatial size of the local branch latent for a given input size.
  std::int64_t latent_size(std::int64_t input_size) const;

  // Global branch (G1).
  torch::nn::Sequential global_stem{nullptr};
  torch::nn::ModuleList global_encoder{nullptr};
  torch::nn::Sequential global_trunk{nullptr};
  torch::nn::ModuleList global_decoder{nullptr};
  // Local branch (G2).
  torch::nn::Sequential local_stem{nullptr};
  torch::nn::ModuleList local_encoder{nullptr};
  torch::nn::Conv2d fusion{nullptr};
  torch::nn::Sequential local_trunk{nullptr};
  torch::nn::ModuleList local_decoder{nullptr};
  torch::nn::Conv2d head{nullptr};

 private:
  bool use_style_;
  int in_channels_;
  int global_depth_;
  int local_depth_;
};
TORCH_MODULE(CoarseToFineGenerator);

/// Small CNN mapping an image to logits over the three sketch styles.
struct StyleClassifierImpl : torch::nn::Module {
  StyleClassifierImpl(int in_channels, int width);
  torch::Tensor forward(const torch::Tensor& x);  // logits [N,3]
  torch::Tensor probabilities(const torch::Tensor& x);

  torch::nn::Sequential features{nullptr};
  torch::nn::Linear classifier{nullptr};
};
TORCH_MODULE(StyleClassifier);

/// Fixed VGG-style feature extractor with one tap at the end of each stage.
/// Weights are drawn once from a private seeded generator (or loaded from an
/// archive) and never require gradients.
struct PerceptualExtractorImpl : torch::nn::Module {
  explicit PerceptualExtractorImpl(const NetworkConfig& config);

  /// Input [N,3,H,W]; returns one tap per stage.
  std::vector<torch::Tensor> forward(const torch::Tensor& x);
  std::size_t tap_count() const { return stages->size(); }

  /// Replaces the weights with a saved archive of identical structure.
  void load_weights(const std::string& path);

  torch::nn::ModuleList stages{nullptr};
};
TORCH_MODULE(PerceptualExtractor);

/// One-hot style map: [3,H,W] with channel c-1 all ones. Throws ConfigError for c outside 1..3.
torch::Tensor expand_style(int style_label, std::int64_t height, std::int64_t width,
                           torch::TensorOptions options = torch::kFloat32);

/// Batched version for labels [N] holding values 1..3 -> [N,3,H,W].
torch::Tensor expand_style(const torch::Tensor& labels, std::int64_t height, std::int64_t width,
                           torch::TensorOptions options);

/// 2x2 average pooling with floor semantics on [N,C,H,W].
torch::Tensor downsample_half(const torch::Tensor& image);

/// Sum of numel over all parameters.
std::int64_t parameter_count(const torch::nn::Module& module);

/// FNV-1a over the raw bytes of every parameter, in registration order.
std::uint64_t parameter_hash(const torch::nn::Module& module);

}  // namespace fss
