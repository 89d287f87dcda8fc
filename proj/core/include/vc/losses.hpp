#pragma once

#include "vc/audio.hpp"
#include "vc/discriminators.hpp"
#include "vc/encoders.hpp"

namespace vc {

// Mean over all elements of KL(p || q) between diagonal Gaussians:
//   log(sigma_q / sigma_p) + (sigma_p^2 + (mu_p - mu_q)^2) / (2 sigma_q^2) - 1/2
// with sigma = exp(0.5 * logvar).
Tensor kl_divergence(const GaussianSequence& p, const GaussianSequence& q);

// Least-squares GAN objectives, summed over sub-discriminators of per-map means.
Tensor adversarial_d_loss(const DiscriminatorOutput& real, const DiscriminatorOutput& fake);
Tensor adversarial_g_loss(const DiscriminatorOutput& fake);

// Sum over sub-discriminators and layers of mean |D_l(real) - D_l(fake)|.
// The real side is detached.
Tensor feature_matching_loss(const DiscriminatorOutput& real, const DiscriminatorOutput& fake);

// Mean squared error between log-mel spectrograms of two equal-length
// waveforms ([1, 1, T] tensors). Differentiable in `generated`.
Tensor reconstruction_loss(const Tensor& generated, const Tensor& reference, const FeatureConfig& cfg);
double reconstruction_loss(const Waveform& generated, const Waveform& reference, const FeatureConfig& cfg);

struct LossWeights {
  double recon = 1.0;
  double kl = 1.0;
  double adv = 1.0;
  double fm = 1.0;

  // Weighting commonly used to make the objective trainable (mel x45, fm x2).
  static LossWeights practical() { return {45.0, 1.0, 1.0, 2.0}; }
};

struct LossReport {
  double kl = 0.0;
  double adv_d = 0.0;
  double adv_g = 0.0;
  double fm = 0.0;
  double recon = 0.0;
  double total = 0.0;
};

// Fills `total` from the four generator terms. With unit weights this is
// exactly recon + kl + adv_g + fm.
LossReport total_generator_loss(LossReport parts, const LossWeights& weights = {});
Tensor total_generator_loss(const Tensor& recon, const Tensor& kl, const Tensor& adv_g,
                            const Tensor& fm, const LossWeights& weights = {});

}  // namespace vc
