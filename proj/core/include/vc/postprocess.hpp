#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "vc/audio.hpp"
#include "vc/layers.hpp"

namespace vc {

// Half-open sample range [start, end).
struct SilenceSegment {
  std::size_t start = 0;
  std::size_t end = 0;
  std::size_t length() const { return end - start; }
  bool operator==(const SilenceSegment&) const = default;
};

// Recorded room silence used as replacement material. Every clip shares one
// sample rate.
struct SilenceBank {
  std::vector<Waveform> clips;

  bool empty() const { return clips.empty(); }
  int sample_rate() const { return clips.empty() ? 0 : clips.front().sample_rate; }
  // Throws std::invalid_argument when empty, mixed-rate or holding a clip
  // shorter than kMinBankClipMs.
  void validate() const;
};

inline constexpr double kMinBankClipMs = 100.0;

struct VadOptions {
  double frame_ms = 20.0;
  double hop_ms = 10.0;
  double threshold_db = -45.0;  // dBFS, frame RMS relative to full scale 1.0
  double min_silence_ms = 120.0;
};

// Energy VAD. A frame is silent when its RMS is below the threshold; the
// result is the union of silent frames, split into maximal runs, with runs
// shorter than min_silence_ms dropped. Sorted and disjoint.
std::vector<SilenceSegment> detect_silence(const Waveform& w, const VadOptions& options = {});

double frame_level_db(std::span<const double> frame);

struct Crop {
  SilenceSegment segment;
  std::size_t clip = 0;
  std::size_t offset = 0;
  bool tiled = false;  // the clip was shorter than the segment and got repeated
};

// Overwrites each segment with a random crop of a random bank clip. Linear
// ramps of crossfade_ms sit just inside both segment edges (shortened to half
// the segment when it is too short); everything outside the segments is
// returned bit-identical. Segments must be sorted, disjoint and inside w.
Waveform replace_silence(const Waveform& w, std::span<const SilenceSegment> segments, const SilenceBank& bank,
                         double crossfade_ms, Rng& rng, std::vector<Crop>* crops = nullptr);

inline constexpr double kDefaultCrossfadeMs = 5.0;
inline constexpr double kNoiseOverlapMs = 50.0;

// Parabolic cross-fade pair, u in [0, 1] across the overlap.
inline double fade_out_gain(double u) { return 1.0 - u * u; }
inline double fade_in_gain(double u) { return 1.0 - (1.0 - u) * (1.0 - u); }

// Bank clips scaled to the bank-average RMS, chained in random order with
// parabolic cross-fades over overlap_ms and cut to exactly target_len.
Waveform build_noise_track(const SilenceBank& bank, std::size_t target_len, Rng& rng,
                           double overlap_ms = kNoiseOverlapMs);

struct NoiseReport {
  double alpha = 0.0;
  double snr_db = 0.0;         // achieved, before clipping
  double clip_fraction = 0.0;  // samples that hit +-1
};

// w + alpha * noise[0 : len(w)] with alpha chosen so the SNR is exactly
// snr_db, then clipped to [-1, 1].
Waveform add_global_noise(const Waveform& w, const Waveform& noise, double snr_db, NoiseReport* report = nullptr);

// Extracts every VAD silence of at least kMinBankClipMs from genuine recordings.
SilenceBank harvest_silence(std::span<const Waveform> recordings, const VadOptions& options = {});

// Loads every .wav in a directory (sorted by name) as a bank.
SilenceBank load_bank(const std::filesystem::path& dir);

}  // namespace vc
