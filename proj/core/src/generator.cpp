#include "vc/generator.hpp"

#include <cmath>
#include <stdexcept>

namespace vc {

LatentSequence reparameterize(const GaussianSequence& p, double noise_scale, Rng& rng) {
  if (!(noise_scale >= 0.0 && noise_scale <= 1.0))
    throw std::invalid_argument("noise_scale must lie in [0, 1]");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> eps(p.mean.size());
  for (double& e : eps) e = noise_scale * normal(rng);
  Tensor noise = Tensor::from(p.mean.shape(), std::move(eps));
  Tensor sigma = ops::exp(ops::scale(p.logvar, 0.5));
  return {ops::add(p.mean, ops::mul(sigma, noise))};
}

LatentSequence reparameterize(const GaussianSequence& p, double noise_scale, std::uint64_t seed) {
  Rng rng(seed);
  return reparameterize(p, noise_scale, rng);
}

std::size_t DecoderConfig::hop() const {
  std::size_t h = 1;
  for (auto f : upsample_factors) h *= f;
  return h;
}

void DecoderConfig::validate() const {
  if (upsample_factors.empty()) throw std::invalid_argument("decoder: no upsample stages");
  for (auto f : upsample_factors)
    if (f == 0) throw std::invalid_argument("decoder: zero upsample factor");
  if (mrf_kernel_sizes.empty() || mrf_kernel_sizes.size() != mrf_dilations.size())
    throw std::invalid_argument("decoder: mrf kernels and dilations differ in count");
  if ((base_channels >> upsample_factors.size()) == 0)
    throw std::invalid_argument("decoder: base_channels too small for the number of stages");
}

Decoder::Decoder(const DecoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg.validate();
  ConvOptions wn;
  wn.norm = Norm::weight;
  wn.init_std = 0.01;
  pre_ = Conv1d(cfg.d_z, cfg.base_channels, 7, {.norm = Norm::weight}, rng);
  cond_ = Conv1d(cfg.d_s, cfg.base_channels, 1, {}, rng);
  std::size_t ch = cfg.base_channels;
  for (std::size_t factor : cfg.upsample_factors) {
    Stage stage{factor, Conv1d(ch, ch / 2, 2 * factor + 1, wn, rng), {}};
    ch /= 2;
    for (std::size_t j = 0; j < cfg.mrf_kernel_sizes.size(); ++j) {
      ResBlock rb;
      for (std::size_t d : cfg.mrf_dilations[j]) {
        ConvOptions dil = wn;
        dil.dilation = d;
        rb.dilated.emplace_back(ch, ch, cfg.mrf_kernel_sizes[j], dil, rng);
        rb.plain.emplace_back(ch, ch, cfg.mrf_kernel_sizes[j], wn, rng);
      }
      stage.mrf.push_back(std::move(rb));
    }
    stages_.push_back(std::move(stage));
  }
  ConvOptions post = wn;
  post.bias = false;
  post_ = Conv1d(ch, 1, 7, post, rng);
}

Tensor Decoder::resblock(const ResBlock& rb, Tensor x) const {
  for (std::size_t i = 0; i < rb.dilated.size(); ++i) {
    Tensor h = rb.dilated[i](ops::leaky_relu(x, cfg_.leaky_slope));
    h = rb.plain[i](ops::leaky_relu(h, cfg_.leaky_slope));
    x = ops::add(x, h);
  }
  return x;
}

Tensor Decoder::forward(const Tensor& z, const SpeakerEmbedding& s) const {
  if (z.shape().c != cfg_.d_z || z.shape().t == 0)
    throw std::invalid_argument("decoder: expected nonempty latent with d_z=" + std::to_string(cfg_.d_z) +
                                ", got " + z.shape().str());
  if (s.dim() != cfg_.d_s)
    throw std::invalid_argument("decoder: speaker embedding has dim " + std::to_string(s.dim()));
  Tensor x = ops::add(pre_(z), cond_(s.values));
  for (const auto& stage : stages_) {
    x = ops::leaky_relu(x, cfg_.leaky_slope);
    x = stage.conv(ops::upsample_nearest(x, stage.factor));
    Tensor fused;
    for (const auto& rb : stage.mrf) {
      Tensor y = resblock(rb, x);
      fused = fused.defined() ? ops::add(fused, y) : y;
    }
    x = ops::scale(fused, 1.0 / static_cast<double>(stage.mrf.size()));
  }
  x = ops::leaky_relu(x, 0.01);
  return ops::tanh(post_(x));
}

Waveform Decoder::decode(const LatentSequence& z, const SpeakerEmbedding& s, int sample_rate) const {
  return Waveform::from_tensor(forward(z.values, s), sample_rate);
}

std::vector<UpsampleStage> Decoder::upsample_stages() const {
  std::vector<UpsampleStage> out;
  for (const auto& st : stages_)
    out.push_back({st.factor, true, false, st.conv.kernel(), st.conv.out_channels()});
  return out;
}

void Decoder::collect(const std::string& prefix, ParamList& out) const {
  pre_.collect(prefix + ".pre", out);
  cond_.collect(prefix + ".cond", out);
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    const std::string p = prefix + ".stage" + std::to_string(i);
    stages_[i].conv.collect(p + ".up", out);
    for (std::size_t j = 0; j < stages_[i].mrf.size(); ++j)
      for (std::size_t k = 0; k < stages_[i].mrf[j].dilated.size(); ++k) {
        const std::string q = p + ".mrf" + std::to_string(j) + "." + std::to_string(k);
        stages_[i].mrf[j].dilated[k].collect(q + ".dilated", out);
        stages_[i].mrf[j].plain[k].collect(q + ".plain", out);
      }
  }
  post_.collect(prefix + ".post", out);
}

}  // namespace vc
