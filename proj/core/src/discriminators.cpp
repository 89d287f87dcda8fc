#include "vc/discriminators.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace vc {

namespace {

ConvOptions conv_opts(std::size_t stride, std::size_t pad, std::size_t groups, Norm norm) {
  ConvOptions o;
  o.stride = stride;
  o.groups = groups;
  o.explicit_padding = true;
  o.pad_left = pad;
  o.pad_right = pad;
  o.norm = norm;
  return o;
}

std::size_t msd_groups(std::size_t in, std::size_t out) {
  for (std::size_t g = 16; g > 1; --g)
    if (in % g == 0 && out % g == 0) return g;
  return 1;
}

}  // namespace

void DiscriminatorConfig::validate() const {
  if (periods.empty() && scales == 0) throw std::invalid_argument("no sub-discriminators configured");
  if (std::find(periods.begin(), periods.end(), std::size_t{0}) != periods.end())
    throw std::invalid_argument("period 0 is not allowed");
  if (mpd_channels.size() != 5) throw std::invalid_argument("mpd_channels needs 5 entries");
  if (msd_channels.size() != 7) throw std::invalid_argument("msd_channels needs 7 entries");
}

std::size_t DiscriminatorConfig::min_length() const {
  std::size_t m = 1;
  for (auto p : periods) m = std::max(m, 2 * p);
  if (scales > 0) m = std::max(m, std::size_t{1} << (scales - 1));
  return m;
}

FoldedLayout folded_layout(std::size_t length, std::size_t period) {
  const std::size_t columns = (length + period - 1) / period;
  return {period, columns, columns * period - length};
}

Discriminators::Discriminators(const DiscriminatorConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg.validate();
  for (std::size_t i = 0; i < cfg.periods.size(); ++i) {
    Sub sub;
    std::size_t in = 1;
    for (std::size_t l = 0; l < 5; ++l) {
      const std::size_t stride = l < 4 ? 3 : 1;
      sub.convs.emplace_back(in, cfg.mpd_channels[l], 5, conv_opts(stride, 2, 1, Norm::weight), rng);
      in = cfg.mpd_channels[l];
    }
    sub.post = Conv1d(in, 1, 3, conv_opts(1, 1, 1, Norm::weight), rng);
    periods_.push_back(std::move(sub));
  }
  static constexpr std::size_t kKernels[7] = {15, 41, 41, 41, 41, 41, 5};
  static constexpr std::size_t kStrides[7] = {1, 2, 2, 4, 4, 1, 1};
  for (std::size_t s = 0; s < cfg.scales; ++s) {
    const Norm norm = s == 0 ? Norm::spectral : Norm::weight;
    Sub sub;
    std::size_t in = 1;
    for (std::size_t l = 0; l < 7; ++l) {
      const std::size_t out = cfg.msd_channels[l];
      const std::size_t groups = (l == 0 || l == 6) ? 1 : msd_groups(in, out);
      sub.convs.emplace_back(in, out, kKernels[l],
                             conv_opts(kStrides[l], kKernels[l] / 2, groups, norm), rng);
      in = out;
    }
    sub.post = Conv1d(in, 1, 3, conv_opts(1, 1, 1, norm), rng);
    scales_.push_back(std::move(sub));
  }
}

void Discriminators::run(const Sub& sub, Tensor x, DiscriminatorOutput& out) const {
  std::vector<Tensor> fmaps;
  for (const auto& conv : sub.convs) {
    x = ops::leaky_relu(conv(x), cfg_.leaky_slope);
    fmaps.push_back(x);
  }
  x = sub.post(x);
  fmaps.push_back(x);
  out.scores.push_back(x);
  out.feature_maps.push_back(std::move(fmaps));
}

DiscriminatorOutput Discriminators::discriminate(const Tensor& wave) const {
  const Shape ws = wave.shape();
  if (ws.n != 1 || ws.c != 1) throw std::invalid_argument("discriminate expects [1, 1, T], got " + ws.str());
  if (ws.t < cfg_.min_length())
    throw std::invalid_argument("waveform of " + std::to_string(ws.t) +
                                " samples too short for folding (need " +
                                std::to_string(cfg_.min_length()) + ")");
  DiscriminatorOutput out;
  for (std::size_t i = 0; i < periods_.size(); ++i) {
    const std::size_t p = cfg_.periods[i];
    const FoldedLayout layout = folded_layout(ws.t, p);
    Tensor x = layout.padding ? ops::pad_reflect(wave, 0, layout.padding) : wave;
    run(periods_[i], ops::fold_period(x, p), out);
  }
  for (std::size_t s = 0; s < scales_.size(); ++s) {
    Tensor x = s == 0 ? wave : ops::avg_pool(wave, std::size_t{1} << s);
    run(scales_[s], x, out);
  }
  return out;
}

DiscriminatorOutput Discriminators::discriminate(const Waveform& w) const {
  return discriminate(w.to_tensor());
}

void Discriminators::collect(const std::string& prefix, ParamList& out) const {
  auto put = [&](const Sub& sub, const std::string& p) {
    for (std::size_t l = 0; l < sub.convs.size(); ++l) sub.convs[l].collect(p + ".conv" + std::to_string(l), out);
    sub.post.collect(p + ".post", out);
  };
  for (std::size_t i = 0; i < periods_.size(); ++i)
    put(periods_[i], prefix + ".mpd" + std::to_string(cfg_.periods[i]));
  for (std::size_t s = 0; s < scales_.size(); ++s) put(scales_[s], prefix + ".msd" + std::to_string(s));
}

}  // namespace vc
