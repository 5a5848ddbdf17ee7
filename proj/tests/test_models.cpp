#include <cmath>

#include <gtest/gtest.h>

#include "fixture.hpp"
#include "fss/error.hpp"
#include "fss/losses.hpp"
#include "fss/networks.hpp"
#include "fss/trainer.hpp"
#include "gradcheck.hpp"

using namespace fss;
using fss::testing::gradient_error;

namespace {

NetworkConfig small_net() { return fss::testing::tiny_config(Task::i2s).network; }

torch::Tensor rand_image(std::vector<int64_t> shape, torch::Dtype dtype = torch::kFloat32) {
  return torch::rand(shape, torch::TensorOptions().dtype(dtype)) * 2 - 1;
}

std::int64_t conv_params(std::int64_t in, std::int64_t out, std::int64_t k, bool bias) {
  return in * out * k * k + (bias ? out : 0);
}

}  // namespace

// ---------------------------------------------------------------------------
// Networks
// ---------------------------------------------------------------------------

TEST(Networks, BottleneckPreservesShapeAndCountsParameters) {
  BottleneckBlock block(32, 4);
  const auto x = torch::randn({2, 32, 8, 8});
  EXPECT_EQ(block->forward(x).sizes(), x.sizes());
  const std::int64_t mid = 8;
  const std::int64_t expected =
      conv_params(32, mid, 1, false) + 2 * mid + conv_params(mid, mid, 3, false) + 2 * mid +
      conv_params(mid, 32, 1, false) + 2 * 32;
  EXPECT_EQ(parameter_count(*block), expected);
}

TEST(Networks, ComponentGeneratorShapes) {
  torch::manual_seed(1);
  const auto net = small_net();
  EncoderDecoderGenerator g(3, 1, 3, net);
  const auto y = g->forward(rand_image({2, 3, 16, 24}));
  EXPECT_EQ(y.sizes(), (std::vector<int64_t>{2, 1, 16, 24}));
  EXPECT_LE(y.abs().max().item<float>(), 1.0f);
  EXPECT_EQ(g->encode(rand_image({1, 3, 16, 16})).sizes(), (std::vector<int64_t>{1, 32, 2, 2}));
  EXPECT_THROW(g->forward(rand_image({1, 3, 12, 16})), ShapeError);
  EXPECT_THROW(g->forward(rand_image({1, 1, 16, 16})), ShapeError);
  EXPECT_THROW(EncoderDecoderGenerator(3, 1, 0, net), ConfigError);
}

TEST(Networks, ComponentGeneratorParameterCount) {
  NetworkConfig net = small_net();
  net.residual_blocks = 1;
  EncoderDecoderGenerator g(3, 1, 2, net);
  // Widths: stem 8, down 8->16->32, one bottleneck at 32, up 32->16->8, head 8->1.
  auto bn = [](std::int64_t c) { return 2 * c; };
  std::int64_t expected = conv_params(3, 8, 3, false) + bn(8);
  expected += conv_params(8, 16, 3, false) + bn(16) + conv_params(16, 32, 3, false) + bn(32);
  expected += conv_params(32, 8, 1, false) + bn(8) + conv_params(8, 8, 3, false) + bn(8) +
              conv_params(8, 32, 1, false) + bn(32);
  expected += conv_params(32, 16, 3, false) + bn(16) + conv_params(16, 8, 3, false) + bn(8);
  expected += conv_params(8, 1, 3, true);
  EXPECT_EQ(parameter_count(*g), expected);
}

TEST(Networks, PatchDiscriminatorOutputs) {
  PatchDiscriminator d(4, 8);
  const auto out = d->forward(rand_image({2, 3, 32, 32}), rand_image({2, 1, 32, 32}));
  EXPECT_EQ(out.probability.sizes(), (std::vector<int64_t>{2}));
  EXPECT_GT(out.probability.min().item<float>(), 0.0f);
  EXPECT_LT(out.probability.max().item<float>(), 1.0f);
  ASSERT_EQ(out.taps.size(), 3u);
  EXPECT_EQ(out.taps[2].sizes(), (std::vector<int64_t>{2, 32, 4, 4}));
  EXPECT_EQ(parameter_count(*d), conv_params(4, 8, 3, true) + conv_params(8, 16, 3, true) +
                                      conv_params(16, 32, 3, true) + conv_params(32, 1, 1, true));
  EXPECT_THROW(d->forward(rand_image({2, 3, 32, 32}), rand_image({2, 1, 16, 32})), ShapeError);
}

TEST(Networks, MultiScaleDiscriminatorHalvesInputs) {
  MultiScaleDiscriminator d(4, 8, 2);
  const auto outs = d->forward(rand_image({1, 3, 32, 32}), rand_image({1, 1, 32, 32}));
  ASSERT_EQ(outs.size(), 2u);
  EXPECT_EQ(outs[0].taps[0].size(2), 16);
  EXPECT_EQ(outs[1].taps[0].size(2), 8);
  EXPECT_THROW(MultiScaleDiscriminator(4, 8, 0), ConfigError);
}

TEST(Networks, DownsampleHalfAverages) {
  const auto x = torch::arange(16, torch::kFloat32).view({1, 1, 4, 4});
  const auto y = downsample_half(x);
  EXPECT_EQ(y.sizes(), (std::vector<int64_t>{1, 1, 2, 2}));
  EXPECT_FLOAT_EQ(y[0][0][0][0].item<float>(), (0 + 1 + 4 + 5) / 4.0f);
  EXPECT_EQ(downsample_half(torch::zeros({1, 1, 5, 7})).sizes(), (std::vector<int64_t>{1, 1, 2, 3}));
}

TEST(Networks, CoarseToFineStyleContract) {
  torch::manual_seed(2);
  const auto net = small_net();
  CoarseToFineGenerator with_style(1, 1, true, net);
  CoarseToFineGenerator plain(1, 1, false, net);
  const auto x = rand_image({2, 1, 32, 32});
  const auto style = expand_style(torch::tensor({1, 3}), 32, 32, torch::kFloat32);
  EXPECT_EQ(with_style->forward(x, style).sizes(), (std::vector<int64_t>{2, 1, 32, 32}));
  EXPECT_EQ(plain->forward(x).sizes(), (std::vector<int64_t>{2, 1, 32, 32}));
  EXPECT_THROW(with_style->forward(x), ConfigError);
  EXPECT_THROW(plain->forward(x, style), ConfigError);
  EXPECT_THROW(plain->forward(rand_image({1, 1, 24, 24})), ShapeError);
}

TEST(Networks, ExpandStyleIsOneHot) {
  for (int label = 1; label <= 3; ++label) {
    const auto m = expand_style(label, 5, 4);
    EXPECT_EQ(m.sizes(), (std::vector<int64_t>{3, 5, 4}));
    EXPECT_EQ(m.sum().item<float>(), 20.0f);
    EXPECT_EQ(m[label - 1].min().item<float>(), 1.0f);
  }
  EXPECT_THROW(expand_style(0, 2, 2), ConfigError);
  EXPECT_THROW(expand_style(4, 2, 2), ConfigError);
  EXPECT_THROW(expand_style(torch::tensor({1, 5}), 2, 2, torch::kFloat32), ConfigError);
  const auto batched = expand_style(torch::tensor({2, 1}), 3, 3, torch::kFloat32);
  EXPECT_TRUE(torch::equal(batched[0], expand_style(2, 3, 3)));
}

TEST(Networks, StyleClassifierProbabilities) {
  StyleClassifier c(1, 8);
  const auto p = c->probabilities(rand_image({4, 1, 32, 32}));
  EXPECT_EQ(p.sizes(), (std::vector<int64_t>{4, 3}));
  EXPECT_TRUE(torch::allclose(p.sum(1), torch::ones({4})));
}

TEST(Networks, PerceptualExtractorIsFixedAndDeterministic) {
  const auto net = small_net();
  PerceptualExtractor a(net);
  torch::manual_seed(99);
  PerceptualExtractor b(net);
  EXPECT_EQ(parameter_hash(*a), parameter_hash(*b));
  for (const auto& p : a->parameters()) EXPECT_FALSE(p.requires_grad());
  const auto taps = a->forward(rand_image({1, 3, 16, 16}));
  ASSERT_EQ(taps.size(), 2u);
  EXPECT_EQ(taps[1].sizes(), (std::vector<int64_t>{1, 16, 8, 8}));
}

TEST(Networks, ParameterHashTracksChanges) {
  PatchDiscriminator d(2, 4);
  const auto before = parameter_hash(*d);
  EXPECT_EQ(before, parameter_hash(*d));
  {
    torch::NoGradGuard no_grad;
    d->classifier->bias.add_(1e-3);
  }
  EXPECT_NE(before, parameter_hash(*d));
}

// ---------------------------------------------------------------------------
// Loss identities and closed forms
// ---------------------------------------------------------------------------

TEST(Losses, ZeroOnIdenticalInputs) {
  const auto y = rand_image({2, 1, 16, 16}, torch::kDouble);
  EXPECT_LE(pixelwise_l1(y, y).item<double>(), 1e-9);
  std::vector<torch::Tensor> taps = {torch::randn({2, 4, 8, 8}, torch::kDouble), torch::randn({2, 8, 4, 4}, torch::kDouble)};
  EXPECT_LE(feature_matching_loss(taps, taps).item<double>(), 1e-9);
  PerceptualExtractor ex(small_net());
  EXPECT_LE(perceptual_loss(ex, y.to(torch::kFloat32), y.to(torch::kFloat32)).item<double>(), 1e-9);
  const auto labels = torch::tensor({1, 3, 2});
  const auto perfect = torch::tensor({{1.0, 0.0, 0.0}, {0.0, 0.0, 1.0}, {0.0, 1.0, 0.0}}, torch::kDouble);
  EXPECT_LE(style_classification_loss(perfect, labels).item<double>(), 1e-9);
}

TEST(Losses, AdversarialClosedForms) {
  const auto half = torch::full({4}, 0.5, torch::kDouble);
  EXPECT_NEAR(discriminator_adversarial(half, half).item<double>(), 2.0 * std::log(2.0), 1e-9);
  EXPECT_NEAR(generator_adversarial(half).item<double>(), std::log(2.0), 1e-9);
  const auto terms = adversarial_loss(torch::tensor({0.9}, torch::kDouble), torch::tensor({0.2}, torch::kDouble));
  EXPECT_NEAR(terms.discriminator.item<double>(), -(std::log(0.9) + std::log(0.8)), 1e-12);
  EXPECT_NEAR(terms.generator.item<double>(), -std::log(0.2), 1e-12);
  // Saturated probabilities stay finite.
  EXPECT_TRUE(std::isfinite(generator_adversarial(torch::zeros({1}, torch::kDouble)).item<double>()));
}

TEST(Losses, FeatureMatchingHandComputed) {
  std::vector<torch::Tensor> r = {torch::zeros({1, 1, 2, 2}, torch::kDouble), torch::ones({1, 2, 1, 1}, torch::kDouble)};
  std::vector<torch::Tensor> f = {torch::full({1, 1, 2, 2}, 0.5, torch::kDouble), torch::zeros({1, 2, 1, 1}, torch::kDouble)};
  EXPECT_NEAR(feature_matching_loss(r, f).item<double>(), 1.5, 1e-12);
  EXPECT_THROW(feature_matching_loss(r, {f[0]}), ShapeError);
}

TEST(Losses, StyleLossMatchesCrossEntropy) {
  const auto logits = torch::randn({5, 3}, torch::kDouble);
  const auto labels = torch::tensor({1, 2, 3, 3, 1});
  const auto from_probs = style_classification_loss(torch::softmax(logits, 1), labels).item<double>();
  const auto from_logits = style_classification_loss_from_logits(logits, labels).item<double>();
  EXPECT_NEAR(from_probs, from_logits, 1e-9);
}

TEST(Losses, WeightedTotalSkipsZeroWeights) {
  LossComponents<double> c{1.0, 2.0, 3.0, 4.0, 5.0};
  EXPECT_DOUBLE_EQ(generator_total_loss(c, LossWeights{10.0, 100.0, 0.5, 0.0}), 1.0 + 20.0 + 300.0 + 2.0);
  EXPECT_THROW((LossWeights{-1.0, 1.0, 1.0, 1.0}).validate(), ConfigError);
}

// ---------------------------------------------------------------------------
// Gradients against central finite differences (double precision, 32x32)
// ---------------------------------------------------------------------------

TEST(Gradients, PixelwiseL1) {
  torch::manual_seed(3);
  const auto y = rand_image({1, 1, 32, 32}, torch::kDouble);
  const auto g = rand_image({1, 1, 32, 32}, torch::kDouble);
  EXPECT_LE(gradient_error([&](const torch::Tensor& x) { return pixelwise_l1(y, x); }, g, 40), 1e-3);
}

TEST(Gradients, FeatureMatchingThroughDiscriminator) {
  torch::manual_seed(4);
  PatchDiscriminator d(2, 4);
  d->to(torch::kDouble);
  const auto cond = rand_image({1, 1, 32, 32}, torch::kDouble);
  const auto real = d->forward(cond, rand_image({1, 1, 32, 32}, torch::kDouble));
  std::vector<torch::Tensor> real_taps;
  for (const auto& t : real.taps) real_taps.push_back(t.detach());
  auto f = [&](const torch::Tensor& x) { return feature_matching_loss(real_taps, d->forward(cond, x).taps); };
  EXPECT_LE(gradient_error(f, rand_image({1, 1, 32, 32}, torch::kDouble), 40), 1e-3);
}

TEST(Gradients, PerceptualLoss) {
  torch::manual_seed(5);
  PerceptualExtractor ex(small_net());
  ex->to(torch::kDouble);
  const auto y = rand_image({1, 3, 32, 32}, torch::kDouble);
  auto f = [&](const torch::Tensor& x) { return perceptual_loss(ex, y, x); };
  EXPECT_LE(gradient_error(f, rand_image({1, 3, 32, 32}, torch::kDouble), 40), 1e-3);
  // Single-channel inputs are replicated to three channels.
  const auto y1 = rand_image({1, 1, 32, 32}, torch::kDouble);
  auto f1 = [&](const torch::Tensor& x) { return perceptual_loss(ex, y1, x); };
  EXPECT_LE(gradient_error(f1, rand_image({1, 1, 32, 32}, torch::kDouble), 40), 1e-3);
}

TEST(Gradients, AdversarialTerms) {
  const auto real = torch::rand({6}, torch::kDouble) * 0.8 + 0.1;
  const auto fake = torch::rand({6}, torch::kDouble) * 0.8 + 0.1;
  EXPECT_LE(gradient_error([&](const torch::Tensor& x) { return discriminator_adversarial(real, x); }, fake, 6), 1e-3);
  EXPECT_LE(gradient_error([&](const torch::Tensor& x) { return discriminator_adversarial(x, fake); }, real, 6), 1e-3);
  EXPECT_LE(gradient_error([](const torch::Tensor& x) { return generator_adversarial(x); }, fake, 6), 1e-3);
}

TEST(Gradients, StyleClassification) {
  const auto labels = torch::tensor({2, 1, 3});
  const auto probs = torch::softmax(torch::randn({3, 3}, torch::kDouble), 1);
  EXPECT_LE(gradient_error([&](const torch::Tensor& x) { return style_classification_loss(x, labels); }, probs, 9),
            1e-3);
  EXPECT_LE(gradient_error([&](const torch::Tensor& x) { return style_classification_loss_from_logits(x, labels); },
                           torch::randn({3, 3}, torch::kDouble), 9),
            1e-3);
}

TEST(Gradients, EndToEndStageTwoGeneratorObjective) {
  torch::manual_seed(6);
  TrainConfig cfg = fss::testing::tiny_config(Task::i2s);
  cfg.resolution = 32;
  cfg.ablation.use_multi_patch = false;
  cfg.regions.windows = {cv::Size(64, 64), cv::Size(64, 64), cv::Size(64, 64), cv::Size(64, 64)};
  FsganModel model(cfg);
  model->to(torch::kDouble);
  const auto input = rand_image({1, 3, 32, 32}, torch::kDouble);
  const auto target = rand_image({1, 1, 32, 32}, torch::kDouble);
  const auto labels = torch::tensor({2});
  auto f = [&](const torch::Tensor& x) {
    return stage2_generator_objective(*model, cfg, x, input, target, labels).total;
  };
  EXPECT_LE(gradient_error(f, input, 30), 1e-3);
}
