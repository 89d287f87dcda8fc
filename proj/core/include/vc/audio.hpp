#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "vc/tensor.hpp"

namespace vc {

struct Waveform {
  std::vector<double> samples;
  int sample_rate = 24000;

  std::size_t size() const { return samples.size(); }
  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
  // [1, 1, T] view for the networks.
  Tensor to_tensor() const;
  static Waveform from_tensor(const Tensor& t, int sample_rate);
};

bool is_supported_rate(int sample_rate);
// Throws std::invalid_argument unless the waveform is nonempty, finite and at a supported rate.
void validate(const Waveform& w);

// 16-bit PCM mono RIFF/WAVE. Samples are scaled by 1/32768.
Waveform load_wav(const std::filesystem::path& path);
// Samples are clipped to [-1, 1) and rounded to the nearest PCM code.
void save_wav(const std::filesystem::path& path, const Waveform& w);

struct FeatureConfig {
  int sample_rate = 24000;
  std::size_t fft_size = 1024;
  std::size_t frame_hop = 256;
  std::size_t frame_length = 1024;
  std::size_t n_mels = 80;
  double mel_fmin = 0.0;
  double mel_fmax = 12000.0;

  std::size_t fft_bins() const { return fft_size / 2 + 1; }
  // Frames produced by the centered STFT for `length` samples: ceil(length / hop).
  std::size_t frames_for(std::size_t length) const {
    return (length + frame_hop - 1) / frame_hop;
  }
  void validate() const;
  bool operator==(const FeatureConfig&) const = default;
};

inline constexpr double kLogMelFloor = 1e-5;

// Row-major [frames x bins].
struct LinearSpectrogram {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::size_t frame_hop = 0;
  std::size_t frame_length = 0;
  std::vector<double> magnitudes;

  double at(std::size_t frame, std::size_t bin) const { return magnitudes[frame * bins + bin]; }
  Tensor to_tensor() const;  // [1, bins, frames]
};

// Row-major [frames x n_mels], natural-log amplitude.
struct MelSpectrogram {
  std::size_t frames = 0;
  std::size_t n_mels = 0;
  std::vector<double> values;

  double at(std::size_t frame, std::size_t mel) const { return values[frame * n_mels + mel]; }
  Tensor to_tensor() const;  // [1, n_mels, frames]
};

// Hann-windowed STFT magnitudes. The signal is reflect-padded by
// (fft_size - hop) / 2 on the left and as needed on the right so that frame f
// starts at padded sample f * hop and there are ceil(len / hop) frames.
LinearSpectrogram linear_spectrogram(const Waveform& w, const FeatureConfig& cfg);
MelSpectrogram mel_spectrogram(const LinearSpectrogram& lin, const FeatureConfig& cfg);
// Convenience: mel_spectrogram(linear_spectrogram(w)).
MelSpectrogram mel_spectrogram(const Waveform& w, const FeatureConfig& cfg);

// Triangular filters on the HTK mel scale, each scaled to unit area in Hz.
// Row-major [n_mels x fft_bins].
std::vector<double> mel_filterbank(const FeatureConfig& cfg);

// Differentiable log-mel of a batch of waveforms [N, 1, T] -> [N, n_mels, frames],
// numerically identical to mel_spectrogram on each row.
Tensor log_mel(const Tensor& waves, const FeatureConfig& cfg);

// Windowed-sinc rational resampler with the cutoff at 0.95 of the lower Nyquist.
Waveform resample(const Waveform& w, int target_rate);

double rms(std::span<const double> x);

// |DFT|^2 of a Hann-windowed frame zero-padded to fft_size (a power of two),
// fft_size / 2 + 1 bins.
std::vector<double> power_spectrum(std::span<const double> frame, std::size_t fft_size);

}  // namespace vc
