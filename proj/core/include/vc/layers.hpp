#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "vc/ops.hpp"
#include "vc/tensor.hpp"

namespace vc {

using Rng = std::mt19937_64;

struct NamedTensor {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};
using ParamList = std::vector<NamedTensor>;

enum class Norm { none, weight, spectral };

struct ConvOptions {
  std::size_t stride = 1;
  std::size_t dilation = 1;
  std::size_t groups = 1;
  // When unset the layer pads dilation*(K-1) split as evenly as possible, so
  // stride-1 convolutions preserve length.
  bool explicit_padding = false;
  std::size_t pad_left = 0;
  std::size_t pad_right = 0;
  Norm norm = Norm::none;
  bool bias = true;
  double init_std = 0.0;  // 0 selects a fan-in scaled uniform init
};

class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
         const ConvOptions& options, Rng& rng);

  Tensor operator()(const Tensor& x) const;
  // The weight actually applied, after any normalization.
  Tensor effective_weight() const;
  void collect(const std::string& prefix, ParamList& out) const;

  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }
  std::size_t kernel() const { return kernel_; }
  const ConvOptions& options() const { return options_; }

 private:
  std::size_t in_ = 0, out_ = 0, kernel_ = 0;
  ConvOptions options_;
  Tensor weight_;  // v under weight norm
  Tensor gain_;    // weight norm only
  Tensor bias_;
  mutable Tensor u_;  // spectral norm power-iteration state
};

class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::size_t channels);
  Tensor operator()(const Tensor& x) const { return ops::layer_norm(x, gamma_, beta_); }
  void collect(const std::string& prefix, ParamList& out) const;

 private:
  Tensor gamma_, beta_;
};

// Fixed sinusoidal table added along time, shaped [1, channels, frames].
Tensor sinusoidal_positions(std::size_t channels, std::size_t frames);

}  // namespace vc
