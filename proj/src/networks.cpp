#include "fss/networks.hpp"

#include <algorithm>
#include <cmath>

#include <ATen/CPUGeneratorImpl.h>

#include "fss/error.hpp"

namespace fss {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

void to_json(nlohmann::json& j, const NetworkConfig& c) {
  j = nlohmann::json{{"base_width", c.base_width},
                     {"max_width", c.max_width},
                     {"residual_blocks", c.residual_blocks},
                     {"bottleneck_ratio", c.bottleneck_ratio},
                     {"component_depth", c.component_depth},
                     {"rest_depth", c.rest_depth},
                     {"discriminator_width", c.discriminator_width},
                     {"discriminator_scales", c.discriminator_scales},
                     {"global_depth", c.global_depth},
                     {"global_residual_blocks", c.global_residual_blocks},
                     {"local_depth", c.local_depth},
                     {"local_residual_blocks", c.local_residual_blocks},
                     {"classifier_width", c.classifier_width},
                     {"extractor_widths", c.extractor_widths},
                     {"extractor_convs", c.extractor_convs},
                     {"extractor_seed", c.extractor_seed}};
}

void from_json(const nlohmann::json& j, NetworkConfig& c) {
  NetworkConfig d;
  c.base_width = j.value("base_width", d.base_width);
  c.max_width = j.value("max_width", d.max_width);
  c.residual_blocks = j.value("residual_blocks", d.residual_blocks);
  c.bottleneck_ratio = j.value("bottleneck_ratio", d.bottleneck_ratio);
  c.component_depth = j.value("component_depth", d.component_depth);
  c.rest_depth = j.value("rest_depth", d.rest_depth);
  c.discriminator_width = j.value("discriminator_width", d.discriminator_width);
  c.discriminator_scales = j.value("discriminator_scales", d.discriminator_scales);
  c.global_depth = j.value("global_depth", d.global_depth);
  c.global_residual_blocks = j.value("global_residual_blocks", d.global_residual_blocks);
  c.local_depth = j.value("local_depth", d.local_depth);
  c.local_residual_blocks = j.value("local_residual_blocks", d.local_residual_blocks);
  c.classifier_width = j.value("classifier_width", d.classifier_width);
  c.extractor_widths = j.value("extractor_widths", d.extractor_widths);
  c.extractor_convs = j.value("extractor_convs", d.extractor_convs);
  c.extractor_seed = j.value("extractor_seed", d.extractor_seed);
  if (c.extractor_widths.size() != c.extractor_convs.size() || c.extractor_widths.empty()) {
    throw ConfigError("extractor_widths and extractor_convs must be non-empty and of equal length");
  }
  if (c.discriminator_scales < 1) throw ConfigError("discriminator_scales must be >= 1");
}

namespace {

nn::BatchNorm2d make_norm(int channels) {
  return nn::BatchNorm2d(nn::BatchNorm2dOptions(channels).track_running_stats(false));
}

int width_at(const NetworkConfig& c, int level) {
  return std::min(c.base_width << level, c.max_width);
}

nn::Sequential make_stem(int in_channels, int out_channels) {
  return nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 3).padding(1).bias(false)),
                        make_norm(out_channels), nn::ReLU());
}

nn::Sequential make_trunk(int channels, int blocks, int ratio) {
  nn::Sequential trunk;
  for (int i = 0; i < blocks; ++i) trunk->push_back(BottleneckBlock(channels, ratio));
  return trunk;
}

torch::Tensor run_trunk(nn::Sequential& trunk, const torch::Tensor& x) {
  return trunk->size() == 0 ? x : trunk->forward(x);
}

void check_image(const torch::Tensor& x, int channels, std::int64_t divisor, const char* who) {
  if (x.dim() != 4) throw ShapeError(std::string(who) + ": expected [N,C,H,W]");
  if (x.size(1) != channels) {
    throw ShapeError(std::string(who) + ": expected " + std::to_string(channels) + " channels, got " +
                     std::to_string(x.size(1)));
  }
  if (x.size(2) == 0 || x.size(3) == 0 || x.size(2) % divisor != 0 || x.size(3) % divisor != 0) {
    throw ShapeError(std::string(who) + ": spatial size " + std::to_string(x.size(2)) + "x" +
                     std::to_string(x.size(3)) + " not divisible by " + std::to_string(divisor));
  }
}

torch::Tensor resize_to(const torch::Tensor& x, std::int64_t h, std::int64_t w, bool nearest) {
  if (x.size(2) == h && x.size(3) == w) return x;
  if (nearest) {
    return F::interpolate(x, F::InterpolateFuncOptions().size(std::vector<std::int64_t>{h, w}).mode(torch::kNearest));
  }
  if (x.size(2) % h == 0 && x.size(3) % w == 0) {
    return F::adaptive_avg_pool2d(x, F::AdaptiveAvgPool2dFuncOptions({h, w}));
  }
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<std::int64_t>{h, w})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

}  // namespace

DownBlockImpl::DownBlockImpl(int in_channels, int out_channels) {
  conv = register_module("conv", nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 3)
                                                .stride(2)
                                                .padding(1)
                                                .bias(false)));
  norm = register_module("norm", make_norm(out_channels));
}

torch::Tensor DownBlockImpl::forward(const torch::Tensor& x) { return torch::relu(norm(conv(x))); }

UpBlockImpl::UpBlockImpl(int in_channels, int out_channels) {
  deconv = register_module("deconv", nn::ConvTranspose2d(nn::ConvTranspose2dOptions(in_channels, out_channels, 3)
                                                             .stride(2)
                                                             .padding(1)
                                                             .output_padding(1)
                                                             .bias(false)));
  norm = register_module("norm", make_norm(out_channels));
}

torch::Tensor UpBlockImpl::forward(const torch::Tensor& x) { return torch::relu(norm(deconv(x))); }

BottleneckBlockImpl::BottleneckBlockImpl(int channels, int ratio) {
  const int mid = std::max(1, channels / std::max(1, ratio));
  body = register_module(
      "body", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(channels, mid, 1).bias(false)), make_norm(mid), nn::ReLU(),
                             nn::Conv2d(nn::Conv2dOptions(mid, mid, 3).padding(1).bias(false)), make_norm(mid),
                             nn::ReLU(), nn::Conv2d(nn::Conv2dOptions(mid, channels, 1).bias(false)),
                             make_norm(channels)));
}

torch::Tensor BottleneckBlockImpl::forward(const torch::Tensor& x) { return torch::relu(x + body->forward(x)); }

EncoderDecoderGeneratorImpl::EncoderDecoderGeneratorImpl(int in_channels, int out_channels, int depth,
                                                         const NetworkConfig& config)
    : depth_(depth), in_channels_(in_channels) {
  if (depth < 1) throw ConfigError("generator depth must be >= 1");
  stem = register_module("stem", make_stem(in_channels, config.base_width));
  encoder = register_module("encoder", nn::ModuleList());
  decoder = register_module("decoder", nn::ModuleList());
  for (int i = 0; i < depth; ++i) encoder->push_back(DownBlock(width_at(config, i), width_at(config, i + 1)));
  trunk = register_module("trunk", make_trunk(width_at(config, depth), config.residual_blocks, config.bottleneck_ratio));
  for (int i = depth; i > 0; --i) decoder->push_back(UpBlock(width_at(config, i), width_at(config, i - 1)));
  head = register_module("head", nn::Conv2d(nn::Conv2dOptions(config.base_width, out_channels, 3).padding(1)));
}

void EncoderDecoderGeneratorImpl::check_input(const torch::Tensor& x) const {
  check_image(x, in_channels_, std::int64_t{1} << depth_, "generator");
}

torch::Tensor EncoderDecoderGeneratorImpl::encode(const torch::Tensor& x) {
  check_input(x);
  auto h = stem->forward(x);
  for (auto& block : *encoder) h = block->as<DownBlock>()->forward(h);
  return h;
}

torch::Tensor EncoderDecoderGeneratorImpl::forward(const torch::Tensor& x) {
  auto h = run_trunk(trunk, encode(x));
  for (auto& block : *decoder) h = block->as<UpBlock>()->forward(h);
  return torch::tanh(head(h));
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(int in_channels, int width) {
  layers = register_module("layers", nn::ModuleList());
  int channels = in_channels;
  for (int i = 0; i < 3; ++i) {
    const int out = width << i;
    layers->push_back(nn::Conv2d(nn::Conv2dOptions(channels, out, 3).stride(2).padding(1)));
    channels = out;
  }
  classifier = register_module("classifier", nn::Conv2d(nn::Conv2dOptions(channels, 1, 1)));
}

DiscriminatorOutput PatchDiscriminatorImpl::forward(const torch::Tensor& condition, const torch::Tensor& candidate) {
  if (condition.dim() != 4 || candidate.dim() != 4 || condition.size(0) != candidate.size(0) ||
      condition.size(2) != candidate.size(2) || condition.size(3) != candidate.size(3)) {
    throw ShapeError("discriminator: condition and candidate must share batch and spatial dims");
  }
  DiscriminatorOutput out;
  auto h = torch::cat({condition, candidate}, 1);
  for (auto& layer : *layers) {
    h = F::leaky_relu(layer->as<nn::Conv2d>()->forward(h), F::LeakyReLUFuncOptions().negative_slope(0.2));
    out.taps.push_back(h);
  }
  auto pooled = F::adaptive_avg_pool2d(h, F::AdaptiveAvgPool2dFuncOptions(1));
  out.probability = torch::sigmoid(classifier(pooled)).flatten();
  return out;
}

MultiScaleDiscriminatorImpl::MultiScaleDiscriminatorImpl(int in_channels, int width, int scales) {
  if (scales < 1) throw ConfigError("multi-scale discriminator needs at least one scale");
  discriminators = register_module("discriminators", nn::ModuleList());
  for (int k = 0; k < scales; ++k) discriminators->push_back(PatchDiscriminator(in_channels, width));
}

std::vector<DiscriminatorOutput> MultiScaleDiscriminatorImpl::forward(const torch::Tensor& condition,
                                                                      const torch::Tensor& candidate) {
  if (condition.dim() != 4 || candidate.dim() != 4 || condition.sizes().slice(2) != candidate.sizes().slice(2)) {
    throw ShapeError("multi-scale discriminator: condition and candidate must share spatial dims");
  }
  std::vector<DiscriminatorOutput> outs;
  auto c = condition;
  auto y = candidate;
  for (std::size_t k = 0; k < discriminators->size(); ++k) {
    if (k > 0) {
      c = downsample_half(c);
      y = downsample_half(y);
    }
    outs.push_back((*discriminators)[k]->as<PatchDiscriminator>()->forward(c, y));
  }
  return outs;
}

CoarseToFineGeneratorImpl::CoarseToFineGeneratorImpl(int in_channels, int out_channels, bool use_style,
                                                     const NetworkConfig& config)
    : use_style_(use_style),
      in_channels_(in_channels),
      global_depth_(config.global_depth),
      local_depth_(config.local_depth) {
  if (global_depth_ < 1 || local_depth_ < 1) throw ConfigError("coarse-to-fine depths must be >= 1");
  global_stem = register_module("global_stem", make_stem(in_channels, config.base_width));
  global_encoder = register_module("global_encoder", nn::ModuleList());
  global_decoder = register_module("global_decoder", nn::ModuleList());
  for (int i = 0; i < global_depth_; ++i) {
    global_encoder->push_back(DownBlock(width_at(config, i), width_at(config, i + 1)));
  }
  global_trunk = register_module(
      "global_trunk", make_trunk(width_at(config, global_depth_), config.global_residual_blocks, config.bottleneck_ratio));
  for (int i = global_depth_; i > 0; --i) global_decoder->push_back(UpBlock(width_at(config, i), width_at(config, i - 1)));

  local_stem = register_module("local_stem", make_stem(in_channels, config.base_width));
  local_encoder = register_module("local_encoder", nn::ModuleList());
  local_decoder = register_module("local_decoder", nn::ModuleList());
  for (int i = 0; i < local_depth_; ++i) local_encoder->push_back(DownBlock(width_at(config, i), width_at(config, i + 1)));
  const int latent = width_at(config, local_depth_);
  fusion = register_module("fusion", nn::Conv2d(nn::Conv2dOptions(config.base_width + (use_style ? 3 : 0), latent, 1)));
  local_trunk = register_module("local_trunk", make_trunk(latent, config.local_residual_blocks, config.bottleneck_ratio));
  for (int i = local_depth_; i > 0; --i) local_decoder->push_back(UpBlock(width_at(config, i), width_at(config, i - 1)));
  head = register_module("head", nn::Conv2d(nn::Conv2dOptions(config.base_width, out_channels, 3).padding(1)));
}

std::int64_t CoarseToFineGeneratorImpl::latent_size(std::int64_t input_size) const {
  return input_size >> local_depth_;
}

torch::Tensor CoarseToFineGeneratorImpl::forward(const torch::Tensor& intact, const std::optional<torch::Tensor>& style) {
  if (style && !use_style_) throw ConfigError("style map supplied to a generator built without style conditioning");
  if (!style && use_style_) throw ConfigError("style-conditioned generator called without a style map");
  const std::int64_t divisor = std::int64_t{1} << std::max(global_depth_ + 1, local_depth_);
  check_image(intact, in_channels_, divisor, "coarse-to-fine generator");

  auto g = global_stem->forward(downsample_half(intact));
  for (auto& block : *global_encoder) g = block->as<DownBlock>()->forward(g);
  g = run_trunk(global_trunk, g);
  for (auto& block : *global_decoder) g = block->as<UpBlock>()->forward(g);

  auto latent = local_stem->forward(intact);
  for (auto& block : *local_encoder) latent = block->as<DownBlock>()->forward(latent);
  const auto h = latent.size(2);
  const auto w = latent.size(3);

  auto fused = resize_to(g, h, w, false);
  if (style) {
    if (style->dim() != 4 || style->size(1) != 3 || style->size(0) != intact.size(0)) {
      throw ShapeError("style map must be [N,3,H,W]");
    }
    fused = torch::cat({fused, resize_to(style->to(fused.dtype()), h, w, true)}, 1);
  }
  auto x = run_trunk(local_trunk, latent + fusion(fused));
  for (auto& block : *local_decoder) x = block->as<UpBlock>()->forward(x);
  return torch::tanh(head(x));
}

StyleClassifierImpl::StyleClassifierImpl(int in_channels, int width) {
  features = register_module("features", nn::Sequential());
  int channels = in_channels;
  for (int i = 0; i < 3; ++i) {
    const int out = width << i;
    features->push_back(nn::Conv2d(nn::Conv2dOptions(channels, out, 3).stride(2).padding(1)));
    features->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
    channels = out;
  }
  features->push_back(nn::AdaptiveAvgPool2d(nn::AdaptiveAvgPool2dOptions(1)));
  features->push_back(nn::Flatten());
  classifier = register_module("classifier", nn::Linear(channels, 3));
}

torch::Tensor StyleClassifierImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4) throw ShapeError("style classifier expects [N,C,H,W]");
  return classifier(features->forward(x));
}

torch::Tensor StyleClassifierImpl::probabilities(const torch::Tensor& x) { return torch::softmax(forward(x), 1); }

PerceptualExtractorImpl::PerceptualExtractorImpl(const NetworkConfig& config) {
  if (config.extractor_widths.empty() || config.extractor_widths.size() != config.extractor_convs.size()) {
    throw ConfigError("extractor widths and conv counts must be non-empty and of equal length");
  }
  stages = register_module("stages", nn::ModuleList());
  auto generator = at::detail::createCPUGenerator(config.extractor_seed);
  int channels = 3;
  for (std::size_t s = 0; s < config.extractor_widths.size(); ++s) {
    nn::Sequential stage;
    if (s > 0) stage->push_back(nn::MaxPool2d(nn::MaxPool2dOptions(2)));
    for (int k = 0; k < config.extractor_convs[s]; ++k) {
      const int out = config.extractor_widths[s];
      nn::Conv2d conv(nn::Conv2dOptions(channels, out, 3).padding(1));
      torch::NoGradGuard no_grad;
      const double std_dev = std::sqrt(2.0 / (channels * 9));
      conv->weight.copy_(at::randn(conv->weight.sizes(), generator, torch::kFloat32) * std_dev);
      conv->bias.zero_();
      stage->push_back(conv);
      stage->push_back(nn::ReLU());
      channels = out;
    }
    stages->push_back(stage);
  }
  for (auto& p : parameters()) p.set_requires_grad(false);
}

std::vector<torch::Tensor> PerceptualExtractorImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != 3) throw ShapeError("perceptual extractor expects [N,3,H,W]");
  std::vector<torch::Tensor> taps;
  auto h = x;
  for (auto& stage : *stages) {
    h = stage->as<nn::Sequential>()->forward(h);
    taps.push_back(h);
  }
  return taps;
}

void PerceptualExtractorImpl::load_weights(const std::string& path) {
  torch::serialize::InputArchive archive;
  archive.load_from(path);
  torch::NoGradGuard no_grad;
  for (auto& item : named_parameters()) {
    torch::Tensor value;
    if (!archive.try_read(item.key(), value)) throw DataError("extractor weights missing '" + item.key() + "'");
    if (value.sizes() != item.value().sizes()) throw ShapeError("extractor weight '" + item.key() + "' has wrong shape");
    item.value().copy_(value);
  }
}

torch::Tensor expand_style(int style_label, std::int64_t height, std::int64_t width, torch::TensorOptions options) {
  if (style_label < 1 || style_label > 3) {
    throw ConfigError("style label must be 1, 2 or 3, got " + std::to_string(style_label));
  }
  auto map = torch::zeros({3, height, width}, options);
  map[style_label - 1].fill_(1.0);
  return map;
}

torch::Tensor expand_style(const torch::Tensor& labels, std::int64_t height, std::int64_t width,
                           torch::TensorOptions options) {
  if (labels.dim() != 1) throw ShapeError("style labels must be a 1-D tensor");
  auto l = labels.to(torch::kLong);
  if (l.numel() > 0 && (l.min().item<std::int64_t>() < 1 || l.max().item<std::int64_t>() > 3)) {
    throw ConfigError("style labels must lie in 1..3");
  }
  auto onehot = F::one_hot(l - 1, 3).to(options.dtype());
  return onehot.view({l.size(0), 3, 1, 1}).expand({l.size(0), 3, height, width}).contiguous();
}

torch::Tensor downsample_half(const torch::Tensor& image) {
  if (image.dim() != 4 || image.size(2) < 2 || image.size(3) < 2) {
    throw ShapeError("downsample_half expects [N,C,H,W] with H, W >= 2");
  }
  return F::avg_pool2d(image, F::AvgPool2dFuncOptions(2).stride(2));
}

std::int64_t parameter_count(const torch::nn::Module& module) {
  std::int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

std::uint64_t parameter_hash(const torch::nn::Module& module) {
  std::uint64_t hash = 14695981039346656037ULL;
  for (const auto& p : module.parameters()) {
    auto t = p.detach().to(torch::kCPU).contiguous();
    const auto* bytes = static_cast<const unsigned char*>(t.data_ptr());
    const std::size_t n = t.numel() * t.element_size();
    for (std::size_t i = 0; i < n; ++i) {
      hash ^= bytes[i];
      hash *= 1099511628211ULL;
    }
  }
  return hash;
}

}  // namespace fss
