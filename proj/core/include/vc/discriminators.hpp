#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "vc/audio.hpp"
#include "vc/layers.hpp"

namespace vc {

// Scores and per-layer activations of every sub-discriminator, MPD periods
// first, then MSD scales. feature_maps[i].back() is scores[i].
struct DiscriminatorOutput {
  std::vector<Tensor> scores;
  std::vector<std::vector<Tensor>> feature_maps;

  std::size_t count() const { return scores.size(); }
};

struct DiscriminatorConfig {
  std::vector<std::size_t> periods{2, 3, 5, 7, 11};
  std::size_t scales = 3;
  // Five strided (k=5) layers per period discriminator.
  std::vector<std::size_t> mpd_channels{32, 128, 512, 1024, 1024};
  // Seven layers per scale discriminator (kernels 15, 41 x5, 5).
  std::vector<std::size_t> msd_channels{128, 128, 256, 512, 1024, 1024, 1024};
  double leaky_slope = 0.1;

  void validate() const;
  std::size_t min_length() const;
};

// Shape of the 2-D view a period discriminator convolves: rows = period,
// columns = ceil(length / period) after right reflect-padding.
struct FoldedLayout {
  std::size_t rows;
  std::size_t columns;
  std::size_t padding;
};
FoldedLayout folded_layout(std::size_t length, std::size_t period);

class Discriminators {
 public:
  Discriminators(const DiscriminatorConfig& cfg, Rng& rng);

  DiscriminatorOutput discriminate(const Tensor& wave) const;  // wave [1, 1, T]
  DiscriminatorOutput discriminate(const Waveform& w) const;

  void collect(const std::string& prefix, ParamList& out) const;
  const DiscriminatorConfig& config() const { return cfg_; }
  std::size_t count() const { return cfg_.periods.size() + cfg_.scales; }

 private:
  struct Sub {
    std::vector<Conv1d> convs;
    Conv1d post;
  };
  void run(const Sub& sub, Tensor x, DiscriminatorOutput& out) const;

  DiscriminatorConfig cfg_;
  std::vector<Sub> periods_;
  std::vector<Sub> scales_;
};

}  // namespace vc
