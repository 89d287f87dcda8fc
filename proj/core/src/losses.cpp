#include "vc/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace vc {

Tensor kl_divergence(const GaussianSequence& p, const GaussianSequence& q) {
  const Shape s = p.mean.shape();
  if (!(p.logvar.shape() == s && q.mean.shape() == s && q.logvar.shape() == s))
    throw std::invalid_argument("kl_divergence: shape mismatch " + s.str() + " vs " + q.mean.shape().str());
  auto mp = p.mean.values(), lp = p.logvar.values(), mq = q.mean.values(), lq = q.logvar.values();
  const std::size_t n = mp.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = mp[i] - mq[i];
    acc += 0.5 * (lq[i] - lp[i]) + (std::exp(lp[i]) + d * d) / (2.0 * std::exp(lq[i])) - 0.5;
  }
  const double inv = 1.0 / static_cast<double>(n);
  auto nmp = p.mean.node(), nlp = p.logvar.node(), nmq = q.mean.node(), nlq = q.logvar.node();
  return make_result({1, 1, 1}, {acc * inv}, {p.mean, p.logvar, q.mean, q.logvar},
                     [=](detail::Node& self) {
                       const double g = self.grad[0] * inv;
                       for (std::size_t i = 0; i < n; ++i) {
                         const double d = nmp->value[i] - nmq->value[i];
                         const double vq = std::exp(nlq->value[i]);
                         const double vp = std::exp(nlp->value[i]);
                         if (nmp->requires_grad) nmp->grad_buffer()[i] += g * d / vq;
                         if (nmq->requires_grad) nmq->grad_buffer()[i] -= g * d / vq;
                         if (nlp->requires_grad) nlp->grad_buffer()[i] += g * (-0.5 + 0.5 * vp / vq);
                         if (nlq->requires_grad)
                           nlq->grad_buffer()[i] += g * (0.5 - 0.5 * (vp + d * d) / vq);
                       }
                     });
}

Tensor adversarial_d_loss(const DiscriminatorOutput& real, const DiscriminatorOutput& fake) {
  if (real.count() != fake.count())
    throw std::invalid_argument("adversarial_d_loss: " + std::to_string(real.count()) + " real vs " +
                                std::to_string(fake.count()) + " fake sub-discriminators");
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t i = 0; i < real.count(); ++i) {
    const Tensor& r = real.scores[i];
    const Tensor& f = fake.scores[i];
    total = ops::add(total, ops::mse(r, Tensor::full(r.shape(), 1.0)));
    total = ops::add(total, ops::mse(f, Tensor::zeros(f.shape())));
  }
  return total;
}

Tensor adversarial_g_loss(const DiscriminatorOutput& fake) {
  Tensor total = Tensor::scalar(0.0);
  for (const auto& f : fake.scores) total = ops::add(total, ops::mse(f, Tensor::full(f.shape(), 1.0)));
  return total;
}

Tensor feature_matching_loss(const DiscriminatorOutput& real, const DiscriminatorOutput& fake) {
  if (real.feature_maps.size() != fake.feature_maps.size())
    throw std::invalid_argument("feature_matching_loss: sub-discriminator count mismatch");
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t i = 0; i < real.feature_maps.size(); ++i) {
    const auto& rl = real.feature_maps[i];
    const auto& fl = fake.feature_maps[i];
    if (rl.size() != fl.size())
      throw std::invalid_argument("feature_matching_loss: layer count mismatch at sub-discriminator " +
                                  std::to_string(i));
    for (std::size_t l = 0; l < rl.size(); ++l) {
      if (!(rl[l].shape() == fl[l].shape()))
        throw std::invalid_argument("feature_matching_loss: shape mismatch at sub-discriminator " +
                                    std::to_string(i) + " layer " + std::to_string(l) + ": " +
                                    rl[l].shape().str() + " vs " + fl[l].shape().str());
      total = ops::add(total, ops::mean_abs_diff(fl[l], rl[l].detach()));
    }
  }
  return total;
}

Tensor reconstruction_loss(const Tensor& generated, const Tensor& reference, const FeatureConfig& cfg) {
  if (!(generated.shape() == reference.shape()))
    throw std::invalid_argument("reconstruction_loss: length mismatch " + generated.shape().str() +
                                " vs " + reference.shape().str());
  return ops::mse(log_mel(generated, cfg), log_mel(reference, cfg));
}

double reconstruction_loss(const Waveform& generated, const Waveform& reference, const FeatureConfig& cfg) {
  if (generated.size() != reference.size())
    throw std::invalid_argument("reconstruction_loss: length mismatch " + std::to_string(generated.size()) +
                                " vs " + std::to_string(reference.size()));
  NoGradGuard guard;
  return reconstruction_loss(generated.to_tensor(), reference.to_tensor(), cfg).item();
}

LossReport total_generator_loss(LossReport parts, const LossWeights& w) {
  parts.total = w.recon * parts.recon + w.kl * parts.kl + w.adv * parts.adv_g + w.fm * parts.fm;
  return parts;
}

Tensor total_generator_loss(const Tensor& recon, const Tensor& kl, const Tensor& adv_g, const Tensor& fm,
                            const LossWeights& w) {
  Tensor t = ops::add(ops::scale(recon, w.recon), ops::scale(kl, w.kl));
  t = ops::add(t, ops::scale(adv_g, w.adv));
  return ops::add(t, ops::scale(fm, w.fm));
}

}  // namespace vc
