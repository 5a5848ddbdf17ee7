#pragma once

// Training objectives. All per-layer norms are elementwise means so values do
// not scale with resolution or channel count.

#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "fss/networks.hpp"

namespace fss {

/// Probabilities are clamped to [eps, 1 - eps] before taking logs.
inline constexpr double kProbabilityEpsilon = 1e-7;

struct LossWeights {
  double lambda_fm = 0.0;
  double lambda_1 = 0.0;
  double lambda_per = 0.0;
  double lambda_sty = 0.0;

  /// Throws ConfigError if any weight is negative or not finite.
  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);

struct AdversarialTerms {
  torch::Tensor discriminator;  // -[log D(real) + log(1 - D(fake))]
  torch::Tensor generator;      // -log D(fake), non-saturating
};

/// Batch means of the discriminator and generator adversarial terms.
AdversarialTerms adversarial_loss(const torch::Tensor& d_real, const torch::Tensor& d_fake);
torch::Tensor discriminator_adversarial(const torch::Tensor& d_real, const torch::Tensor& d_fake);
torch::Tensor generator_adversarial(const torch::Tensor& d_fake);

/// sum_i mean |real_i - fake_i| over the tap layers.
torch::Tensor feature_matching_loss(const std::vector<torch::Tensor>& taps_real,
                                    const std::vector<torch::Tensor>& taps_fake);

/// Feature matching averaged over the discriminator scales.
torch::Tensor feature_matching_loss(const std::vector<DiscriminatorOutput>& real,
                                    const std::vector<DiscriminatorOutput>& fake);

/// sum_i mean |phi_i(y) - phi_i(g)|. Single-channel inputs are replicated to three channels.
torch::Tensor perceptual_loss(PerceptualExtractor& extractor, const torch::Tensor& y, const torch::Tensor& g);

/// mean |y - g| over pixels and channels.
torch::Tensor pixelwise_l1(const torch::Tensor& y, const torch::Tensor& g);

/// Batch mean of -log probs[c - 1]; labels hold values 1..3.
torch::Tensor style_classification_loss(const torch::Tensor& probs, const torch::Tensor& labels);

/// Same objective computed from logits (log-softmax), used during training.
torch::Tensor style_classification_loss_from_logits(const torch::Tensor& logits, const torch::Tensor& labels);

/// Sum of the per-scale discriminator adversarial terms.
torch::Tensor discriminator_total_loss(const std::vector<torch::Tensor>& per_scale);

template <typename T>
struct LossComponents {
  T adv{};
  T fm{};
  T l1{};
  T per{};
  T sty{};
};

/// adv + lambda_fm fm + lambda_1 l1 + lambda_per per + lambda_sty sty.
/// A zero weight drops its term entirely (so an unused component may hold anything).
template <typename T>
T generator_total_loss(const LossComponents<T>& c, const LossWeights& w) {
  T total = c.adv;
  if (w.lambda_fm != 0.0) total = total + w.lambda_fm * c.fm;
  if (w.lambda_1 != 0.0) total = total + w.lambda_1 * c.l1;
  if (w.lambda_per != 0.0) total = total + w.lambda_per * c.per;
  if (w.lambda_sty != 0.0) total = total + w.lambda_sty * c.sty;
  return total;
}

}  // namespace fss
