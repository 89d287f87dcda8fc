#pragma once

#include <atomic>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "vc/audio.hpp"
#include "vc/layers.hpp"

namespace vc {

inline constexpr double kLogvarMin = -30.0;
inline constexpr double kLogvarMax = 20.0;

// Frame-level linguistic features g, stored [1, d_g, frames].
struct LinguisticEmbedding {
  Tensor values;
  std::size_t frames() const { return values.shape().t; }
  std::size_t dim() const { return values.shape().c; }
};

// One row of the speaker table, stored [1, d_s, 1].
struct SpeakerEmbedding {
  Tensor values;
  std::size_t speaker_id = 0;
  std::size_t dim() const { return values.shape().c; }
};

// Diagonal Gaussian per frame; mean and logvar are [1, d_z, frames].
struct GaussianSequence {
  Tensor mean;
  Tensor logvar;
  std::size_t frames() const { return mean.shape().t; }
  std::size_t dim() const { return mean.shape().c; }
};

// Broadcasts s over `frames` steps: [1, d_s, 1] -> [1, d_s, frames].
Tensor broadcast_time(const Tensor& s, std::size_t frames);

// ---------------------------------------------------------------------------
// Linguistic encoders

class LinguisticEncoder {
 public:
  virtual ~LinguisticEncoder() = default;
  virtual LinguisticEmbedding encode(const MelSpectrogram& mel) const = 0;
  virtual std::size_t dim() const = 0;
  virtual void collect(const std::string&, ParamList&) const {}
};

struct ConformerConfig {
  std::size_t n_mels = 80;
  std::size_t d_model = 192;
  std::size_t blocks = 2;
  std::size_t heads = 4;
  std::size_t ff_mult = 4;
  std::size_t conv_kernel = 15;
  // Output frame i summarizes mel frames [i*subsample, (i+1)*subsample).
  std::size_t subsample = 1;
};

// Conformer stack: half-step feed-forward, self-attention, depthwise
// convolution module, half-step feed-forward, final layer norm.
class ConformerEncoder final : public LinguisticEncoder {
 public:
  ConformerEncoder(const ConformerConfig& cfg, Rng& rng);
  LinguisticEmbedding encode(const MelSpectrogram& mel) const override;
  Tensor forward(const Tensor& mel) const;  // [1, n_mels, F] -> [1, d, ceil(F / subsample)]
  std::size_t dim() const override { return cfg_.d_model; }
  void collect(const std::string& prefix, ParamList& out) const override;
  const ConformerConfig& config() const { return cfg_; }

 private:
  struct FeedForward {
    LayerNorm norm;
    Conv1d up, down;
  };
  struct Block {
    FeedForward ff1, ff2;
    LayerNorm attn_norm;
    Conv1d query, key, value, attn_out;
    LayerNorm conv_norm;
    Conv1d pointwise_in, depthwise, pointwise_out;
    LayerNorm conv_mid_norm;
    LayerNorm out_norm;
  };
  Tensor feed_forward(const FeedForward& ff, const Tensor& x) const;

  ConformerConfig cfg_;
  Conv1d input_;
  std::vector<Block> blocks_;
};

// Adapter over features computed elsewhere (e.g. an external ASR encoder).
class PrecomputedFeatures final : public LinguisticEncoder {
 public:
  explicit PrecomputedFeatures(LinguisticEmbedding features) : features_(std::move(features)) {}
  LinguisticEmbedding encode(const MelSpectrogram& mel) const override;
  std::size_t dim() const override { return features_.dim(); }

 private:
  LinguisticEmbedding features_;
};

// `.ppg` layout: u32 frames, u32 dim, then frames*dim little-endian float32, row-major.
LinguisticEmbedding read_ppg(const std::filesystem::path& path);
void write_ppg(const std::filesystem::path& path, const LinguisticEmbedding& g);

// ---------------------------------------------------------------------------
// Speaker table

class SpeakerTable {
 public:
  SpeakerTable() = default;
  SpeakerTable(std::size_t speakers, std::size_t dim, Rng& rng);
  SpeakerEmbedding lookup(std::size_t speaker_id) const;
  std::size_t size() const { return table_.shape().n; }
  std::size_t dim() const { return table_.shape().c; }
  void collect(const std::string& prefix, ParamList& out) const;

 private:
  Tensor table_;  // [speakers, dim, 1]
};

// ---------------------------------------------------------------------------
// Prior encoder q(z | g, s)

struct PriorConfig {
  std::size_t d_g = 192;
  std::size_t d_s = 256;
  std::size_t d_z = 192;
  std::size_t hidden = 192;
  std::size_t blocks = 4;
  std::size_t heads = 2;
  std::size_t ffn = 768;
  std::size_t kernel = 3;
};

// Feed-forward transformer blocks (self-attention then a two-layer 1-D
// convolution, each with residual and post layer norm) over concat(g, s).
class PriorEncoder {
 public:
  PriorEncoder(const PriorConfig& cfg, Rng& rng);
  GaussianSequence encode(const LinguisticEmbedding& g, const SpeakerEmbedding& s) const;
  void collect(const std::string& prefix, ParamList& out) const;
  const PriorConfig& config() const { return cfg_; }

 private:
  struct Block {
    Conv1d query, key, value, attn_out;
    LayerNorm norm1;
    Conv1d conv1, conv2;
    LayerNorm norm2;
  };
  PriorConfig cfg_;
  Conv1d input_;
  std::vector<Block> blocks_;
  Conv1d proj_;
};

// ---------------------------------------------------------------------------
// Posterior encoder p(z | x_linear, s)

struct PosteriorConfig {
  std::size_t fft_bins = 513;
  std::size_t d_s = 256;
  std::size_t d_z = 192;
  std::size_t hidden = 192;
  std::size_t layers = 16;
  std::size_t kernel = 5;
  std::size_t dilation_rate = 1;
};

// Non-causal WaveNet: dilated convolutions with tanh*sigmoid gating, residual
// and skip paths, and the speaker embedding added inside every layer.
class PosteriorEncoder {
 public:
  PosteriorEncoder(const PosteriorConfig& cfg, Rng& rng);
  PosteriorEncoder(const PosteriorEncoder&) = delete;
  PosteriorEncoder& operator=(const PosteriorEncoder&) = delete;

  GaussianSequence encode(const LinearSpectrogram& x, const SpeakerEmbedding& s) const;
  GaussianSequence encode(const Tensor& x, const SpeakerEmbedding& s) const;  // x [1, bins, F]
  void collect(const std::string& prefix, ParamList& out) const;
  const PosteriorConfig& config() const { return cfg_; }

  // Frames on each side of an input frame that can influence an output frame.
  std::size_t receptive_radius() const;
  // Number of encode() calls so far; inference must leave it untouched.
  std::size_t calls() const { return calls_.load(); }

 private:
  struct Layer {
    Conv1d in, cond, res_skip;
  };
  PosteriorConfig cfg_;
  Conv1d pre_;
  std::vector<Layer> layers_;
  Conv1d proj_;
  mutable std::atomic<std::size_t> calls_{0};
};

}  // namespace vc
