#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "vc/audio.hpp"
#include "vc/encoders.hpp"
#include "vc/layers.hpp"

namespace vc {

// Sampled latent z, stored [1, d_z, frames].
struct LatentSequence {
  Tensor values;
  std::size_t frames() const { return values.shape().t; }
  std::size_t dim() const { return values.shape().c; }
};

// z = mean + noise_scale * exp(0.5 * logvar) * eps with eps ~ N(0, 1) per
// element. noise_scale = 1 is the plain reparameterization trick; gradients
// flow into mean and logvar.
LatentSequence reparameterize(const GaussianSequence& p, double noise_scale, Rng& rng);
LatentSequence reparameterize(const GaussianSequence& p, double noise_scale, std::uint64_t seed);

struct DecoderConfig {
  std::size_t d_z = 192;
  std::size_t d_s = 256;
  std::vector<std::size_t> upsample_factors{8, 8, 2, 2};
  std::vector<std::size_t> mrf_kernel_sizes{3, 7, 11};
  std::vector<std::vector<std::size_t>> mrf_dilations{{1, 3, 5}, {1, 3, 5}, {1, 3, 5}};
  std::size_t base_channels = 512;
  double leaky_slope = 0.1;

  std::size_t hop() const;
  void validate() const;
};

struct UpsampleStage {
  std::size_t factor = 0;
  bool nearest_interpolation = false;
  bool transposed_convolution = false;
  std::size_t conv_kernel = 0;
  std::size_t out_channels = 0;
};

// HiFi-GAN style generator. Each upsampling stage is nearest-neighbour
// interpolation by the stage factor followed by a length-preserving 1-D
// convolution, then a multi-receptive-field fusion of residual blocks.
class Decoder {
 public:
  Decoder(const DecoderConfig& cfg, Rng& rng);

  // z [1, d_z, F] -> waveform [1, 1, F * hop] in (-1, 1).
  Tensor forward(const Tensor& z, const SpeakerEmbedding& s) const;
  Waveform decode(const LatentSequence& z, const SpeakerEmbedding& s, int sample_rate) const;

  void collect(const std::string& prefix, ParamList& out) const;
  const DecoderConfig& config() const { return cfg_; }
  std::vector<UpsampleStage> upsample_stages() const;

 private:
  struct ResBlock {
    std::vector<Conv1d> dilated, plain;
  };
  struct Stage {
    std::size_t factor;
    Conv1d conv;
    std::vector<ResBlock> mrf;
  };
  Tensor resblock(const ResBlock& rb, Tensor x) const;

  DecoderConfig cfg_;
  Conv1d pre_, cond_;
  std::vector<Stage> stages_;
  Conv1d post_;
};

}  // namespace vc
