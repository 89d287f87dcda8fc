#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vc/audio.hpp"
#include "vc/discriminators.hpp"
#include "vc/encoders.hpp"
#include "vc/generator.hpp"
#include "vc/losses.hpp"
#include "vc/optim.hpp"

namespace vc {

enum class LinguisticSource { conformer, precomputed };

// Everything needed to rebuild a model and resume training. Serialized as
// flat `key = value` text; lists are comma separated and the nested MRF
// dilation list separates groups with ';'.
struct TrainConfig {
  FeatureConfig features;

  LinguisticSource linguistic_source = LinguisticSource::conformer;
  std::size_t d_g = 192;
  std::size_t conformer_blocks = 2;
  std::size_t conformer_heads = 4;
  std::size_t conformer_ff_mult = 4;
  std::size_t conformer_kernel = 15;
  std::size_t linguistic_subsample = 1;
  bool freeze_linguistic = false;

  std::size_t n_speakers = 0;  // 0: size the table from the manifest
  std::size_t d_s = 256;
  std::size_t d_z = 192;

  std::size_t prior_hidden = 192;
  std::size_t prior_blocks = 4;
  std::size_t prior_heads = 2;
  std::size_t prior_ffn = 768;
  std::size_t prior_kernel = 3;

  std::size_t posterior_hidden = 192;
  std::size_t posterior_layers = 16;
  std::size_t posterior_kernel = 5;
  std::size_t posterior_dilation_rate = 1;

  std::vector<std::size_t> upsample_factors{8, 8, 2, 2};
  std::vector<std::size_t> mrf_kernel_sizes{3, 7, 11};
  std::vector<std::vector<std::size_t>> mrf_dilations{{1, 3, 5}, {1, 3, 5}, {1, 3, 5}};
  std::size_t decoder_channels = 512;
  double leaky_slope = 0.1;

  std::vector<std::size_t> mpd_periods{2, 3, 5, 7, 11};
  std::size_t msd_scales = 3;
  std::vector<std::size_t> mpd_channels{32, 128, 512, 1024, 1024};
  std::vector<std::size_t> msd_channels{128, 128, 256, 512, 1024, 1024, 1024};

  std::size_t segment_frames = 32;
  std::size_t batch_size = 1;
  std::size_t total_steps = 1000;
  std::uint64_t seed = 1234;
  double lr_g = 2e-4;
  double lr_d = 2e-4;
  double lr_decay = 0.999;  // per epoch
  double adam_beta1 = 0.8;
  double adam_beta2 = 0.99;

  std::string loss_preset = "unit";  // "unit" (all weights 1) or "practical"
  LossWeights weights;

  std::size_t log_every = 1;
  std::size_t checkpoint_every = 0;  // 0: only at the end

  // Reduced-width configuration for CPU experiments and tests: 24 kHz,
  // hop 128, 40 mels, small channel counts throughout.
  static TrainConfig desk();

  void validate() const;

  ConformerConfig conformer_config() const;
  PriorConfig prior_config() const;
  PosteriorConfig posterior_config() const;
  DecoderConfig decoder_config() const;
  DiscriminatorConfig discriminator_config() const;
  AdamOptions generator_adam() const { return {lr_g, adam_beta1, adam_beta2, 1e-9}; }
  AdamOptions discriminator_adam() const { return {lr_d, adam_beta1, adam_beta2, 1e-9}; }
};

TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);
std::string to_string(const TrainConfig& cfg);

}  // namespace vc
