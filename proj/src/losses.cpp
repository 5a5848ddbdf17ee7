#include "fss/losses.hpp"

#include <cmath>

#include "fss/error.hpp"

namespace fss {

void LossWeights::validate() const {
  for (double v : {lambda_fm, lambda_1, lambda_per, lambda_sty}) {
    if (!std::isfinite(v) || v < 0.0) throw ConfigError("loss weights must be finite and non-negative");
  }
}

void to_json(nlohmann::json& j, const LossWeights& w) {
  j = nlohmann::json{{"lambda_fm", w.lambda_fm}, {"lambda_1", w.lambda_1}, {"lambda_per", w.lambda_per},
                     {"lambda_sty", w.lambda_sty}};
}

void from_json(const nlohmann::json& j, LossWeights& w) {
  w.lambda_fm = j.at("lambda_fm").get<double>();
  w.lambda_1 = j.at("lambda_1").get<double>();
  w.lambda_per = j.at("lambda_per").get<double>();
  w.lambda_sty = j.value("lambda_sty", 0.0);
  w.validate();
}

namespace {

torch::Tensor clamp_prob(const torch::Tensor& p) {
  return p.clamp(kProbabilityEpsilon, 1.0 - kProbabilityEpsilon);
}

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* who) {
  if (a.sizes() != b.sizes()) {
    throw ShapeError(std::string(who) + ": shape mismatch " + c10::str(a.sizes()) + " vs " + c10::str(b.sizes()));
  }
}

torch::Tensor style_indices(const torch::Tensor& labels, std::int64_t batch) {
  auto l = labels.to(torch::kLong).flatten();
  if (l.size(0) != batch) throw ShapeError("style labels must have one entry per sample");
  if (l.numel() > 0 && (l.min().item<std::int64_t>() < 1 || l.max().item<std::int64_t>() > 3)) {
    throw ConfigError("style labels must lie in 1..3");
  }
  return l - 1;
}

}  // namespace

torch::Tensor discriminator_adversarial(const torch::Tensor& d_real, const torch::Tensor& d_fake) {
  return -(torch::log(clamp_prob(d_real)) + torch::log(1.0 - clamp_prob(d_fake))).mean();
}

torch::Tensor generator_adversarial(const torch::Tensor& d_fake) { return -torch::log(clamp_prob(d_fake)).mean(); }

AdversarialTerms adversarial_loss(const torch::Tensor& d_real, const torch::Tensor& d_fake) {
  return {discriminator_adversarial(d_real, d_fake), generator_adversarial(d_fake)};
}

torch::Tensor feature_matching_loss(const std::vector<torch::Tensor>& taps_real,
                                    const std::vector<torch::Tensor>& taps_fake) {
  if (taps_real.size() != taps_fake.size() || taps_real.empty()) {
    throw ShapeError("feature matching: tap lists must be non-empty and of equal length");
  }
  torch::Tensor total;
  for (std::size_t i = 0; i < taps_real.size(); ++i) {
    require_same_shape(taps_real[i], taps_fake[i], "feature matching");
    auto term = (taps_real[i] - taps_fake[i]).abs().mean();
    total = total.defined() ? total + term : term;
  }
  return total;
}

torch::Tensor feature_matching_loss(const std::vector<DiscriminatorOutput>& real,
                                    const std::vector<DiscriminatorOutput>& fake) {
  if (real.size() != fake.size() || real.empty()) {
    throw ShapeError("feature matching: scale lists must be non-empty and of equal length");
  }
  torch::Tensor total;
  for (std::size_t k = 0; k < real.size(); ++k) {
    auto term = feature_matching_loss(real[k].taps, fake[k].taps);
    total = total.defined() ? total + term : term;
  }
  return total / static_cast<double>(real.size());
}

torch::Tensor perceptual_loss(PerceptualExtractor& extractor, const torch::Tensor& y, const torch::Tensor& g) {
  require_same_shape(y, g, "perceptual loss");
  if (y.dim() != 4 || (y.size(1) != 1 && y.size(1) != 3)) {
    throw ShapeError("perceptual loss expects [N,1,H,W] or [N,3,H,W]");
  }
  auto to_rgb = [](const torch::Tensor& t) { return t.size(1) == 1 ? t.expand({-1, 3, -1, -1}) : t; };
  const auto fy = extractor->forward(to_rgb(y));
  const auto fg = extractor->forward(to_rgb(g));
  torch::Tensor total;
  for (std::size_t i = 0; i < fy.size(); ++i) {
    auto term = (fy[i] - fg[i]).abs().mean();
    total = total.defined() ? total + term : term;
  }
  return total;
}

torch::Tensor pixelwise_l1(const torch::Tensor& y, const torch::Tensor& g) {
  require_same_shape(y, g, "pixel-wise L1");
  return (y - g).abs().mean();
}

torch::Tensor style_classification_loss(const torch::Tensor& probs, const torch::Tensor& labels) {
  if (probs.dim() != 2 || probs.size(1) != 3) throw ShapeError("style probabilities must be [N,3]");
  auto idx = style_indices(labels, probs.size(0));
  auto picked = probs.gather(1, idx.unsqueeze(1)).squeeze(1);
  return -torch::log(picked.clamp_min(kProbabilityEpsilon)).mean();
}

torch::Tensor style_classification_loss_from_logits(const torch::Tensor& logits, const torch::Tensor& labels) {
  if (logits.dim() != 2 || logits.size(1) != 3) throw ShapeError("style logits must be [N,3]");
  auto idx = style_indices(labels, logits.size(0));
  return -torch::log_softmax(logits, 1).gather(1, idx.unsqueeze(1)).squeeze(1).mean();
}

torch::Tensor discriminator_total_loss(const std::vector<torch::Tensor>& per_scale) {
  if (per_scale.empty()) throw ShapeError("discriminator loss needs at least one scale");
  torch::Tensor total = per_scale.front();
  for (std::size_t k = 1; k < per_scale.size(); ++k) total = total + per_scale[k];
  return total;
}

}  // namespace fss
