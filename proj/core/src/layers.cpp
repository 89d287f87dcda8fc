#include "vc/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace vc {

Conv1d::Conv1d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
               const ConvOptions& options, Rng& rng)
    : in_(in_channels), out_(out_channels), kernel_(kernel), options_(options) {
  if (in_channels % options.groups != 0 || out_channels % options.groups != 0)
    throw std::invalid_argument("Conv1d: channels not divisible by groups");
  const std::size_t fan_in = (in_channels / options.groups) * kernel;
  std::vector<double> w(out_channels * fan_in);
  if (options.init_std > 0.0) {
    std::normal_distribution<double> dist(0.0, options.init_std);
    for (double& x : w) x = dist(rng);
  } else {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& x : w) x = dist(rng);
  }
  weight_ = Tensor::from({out_channels, in_channels / options.groups, kernel}, std::move(w), true);

  if (options.norm == Norm::weight) {
    std::vector<double> g(out_channels);
    for (std::size_t o = 0; o < out_channels; ++o) {
      double sq = 0.0;
      for (std::size_t m = 0; m < fan_in; ++m) sq += weight_.values()[o * fan_in + m] * weight_.values()[o * fan_in + m];
      g[o] = std::sqrt(sq);
    }
    gain_ = Tensor::from({out_channels, 1, 1}, std::move(g), true);
  } else if (options.norm == Norm::spectral) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> u(out_channels);
    double sq = 0.0;
    for (double& x : u) {
      x = dist(rng);
      sq += x * x;
    }
    for (double& x : u) x /= std::sqrt(sq);
    u_ = Tensor::from({1, out_channels, 1}, std::move(u));
  }

  if (options.bias) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> b(out_channels);
    for (double& x : b) x = options.init_std > 0.0 ? 0.0 : dist(rng);
    bias_ = Tensor::from({1, out_channels, 1}, std::move(b), true);
  }
}

Tensor Conv1d::effective_weight() const {
  switch (options_.norm) {
    case Norm::weight: return ops::weight_norm(weight_, gain_);
    case Norm::spectral: return ops::spectral_normalize(weight_, u_, grad_enabled());
    case Norm::none: break;
  }
  return weight_;
}

Tensor Conv1d::operator()(const Tensor& x) const {
  ops::ConvSpec spec;
  spec.stride = options_.stride;
  spec.dilation = options_.dilation;
  spec.groups = options_.groups;
  if (options_.explicit_padding) {
    spec.pad_left = options_.pad_left;
    spec.pad_right = options_.pad_right;
  } else {
    const std::size_t total = options_.dilation * (kernel_ - 1);
    spec.pad_left = total / 2;
    spec.pad_right = total - total / 2;
  }
  return ops::conv1d(x, effective_weight(), bias_, spec);
}

void Conv1d::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight_, true});
  if (gain_.defined()) out.push_back({prefix + ".gain", gain_, true});
  if (bias_.defined()) out.push_back({prefix + ".bias", bias_, true});
  if (u_.defined()) out.push_back({prefix + ".sn_u", u_, false});
}

LayerNorm::LayerNorm(std::size_t channels)
    : gamma_(Tensor::full({1, channels, 1}, 1.0, true)),
      beta_(Tensor::zeros({1, channels, 1}, true)) {}

void LayerNorm::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gamma", gamma_, true});
  out.push_back({prefix + ".beta", beta_, true});
}

Tensor sinusoidal_positions(std::size_t channels, std::size_t frames) {
  std::vector<double> pe(channels * frames);
  for (std::size_t c = 0; c < channels; ++c) {
    const double rate = std::pow(10000.0, -static_cast<double>(2 * (c / 2)) / static_cast<double>(channels));
    for (std::size_t t = 0; t < frames; ++t) {
      const double angle = static_cast<double>(t) * rate;
      pe[c * frames + t] = (c % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor::from({1, channels, frames}, std::move(pe));
}

}  // namespace vc
