#include "vc/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "vc/error.hpp"

namespace vc {

namespace {

std::size_t ms_to_samples(double ms, int sample_rate) {
  return static_cast<std::size_t>(std::llround(ms * sample_rate / 1000.0));
}

}  // namespace

void SilenceBank::validate() const {
  if (clips.empty()) throw std::invalid_argument("silence bank is empty");
  const int sr = sample_rate();
  const std::size_t min_len = ms_to_samples(kMinBankClipMs, sr);
  for (std::size_t i = 0; i < clips.size(); ++i) {
    if (clips[i].sample_rate != sr)
      throw std::invalid_argument("silence bank clip " + std::to_string(i) + " has rate " +
                                  std::to_string(clips[i].sample_rate) + ", bank uses " + std::to_string(sr));
    if (clips[i].size() < min_len)
      throw std::invalid_argument("silence bank clip " + std::to_string(i) + " is shorter than 100 ms");
  }
}

double frame_level_db(std::span<const double> frame) {
  const double r = rms(frame);
  return r > 0.0 ? 20.0 * std::log10(r) : -std::numeric_limits<double>::infinity();
}

std::vector<SilenceSegment> detect_silence(const Waveform& w, const VadOptions& o) {
  std::vector<SilenceSegment> out;
  const std::size_t len = w.size();
  if (len == 0) return out;
  const std::size_t frame = std::max<std::size_t>(1, ms_to_samples(o.frame_ms, w.sample_rate));
  const std::size_t hop = std::max<std::size_t>(1, ms_to_samples(o.hop_ms, w.sample_rate));
  const std::size_t min_len = ms_to_samples(o.min_silence_ms, w.sample_rate);
  const std::size_t n_frames = len <= frame ? 1 : 1 + (len - frame + hop - 1) / hop;

  std::vector<SilenceSegment> runs;
  for (std::size_t k = 0; k < n_frames; ++k) {
    const std::size_t start = k * hop;
    const std::size_t end = std::min(start + frame, len);
    const std::span<const double> x(w.samples.data() + start, end - start);
    if (!(frame_level_db(x) < o.threshold_db)) continue;
    if (!runs.empty() && start <= runs.back().end)
      runs.back().end = std::max(runs.back().end, end);
    else
      runs.push_back({start, end});
  }
  for (const auto& r : runs)
    if (r.length() >= min_len) out.push_back(r);
  return out;
}

Waveform replace_silence(const Waveform& w, std::span<const SilenceSegment> segments, const SilenceBank& bank,
                         double crossfade_ms, Rng& rng, std::vector<Crop>* crops) {
  bank.validate();
  if (bank.sample_rate() != w.sample_rate)
    throw std::invalid_argument("silence bank rate " + std::to_string(bank.sample_rate()) +
                                " differs from waveform rate " + std::to_string(w.sample_rate));
  if (crossfade_ms < 0.0) throw std::invalid_argument("crossfade must be non-negative");
  std::size_t prev_end = 0;
  for (const auto& s : segments) {
    if (!(s.start < s.end && s.end <= w.size()))
      throw std::invalid_argument("silence segment [" + std::to_string(s.start) + ", " + std::to_string(s.end) +
                                  ") is empty or outside the waveform");
    if (s.start < prev_end) throw std::invalid_argument("silence segments overlap or are unsorted");
    prev_end = s.end;
  }
  Waveform out = w;
  const std::size_t ramp_len = ms_to_samples(crossfade_ms, w.sample_rate);
  std::uniform_int_distribution<std::size_t> pick_clip(0, bank.clips.size() - 1);
  for (const auto& s : segments) {
    Crop crop{s, pick_clip(rng), 0, false};
    const auto& clip = bank.clips[crop.clip].samples;
    const std::size_t L = s.length();
    if (clip.size() >= L) {
      crop.offset = std::uniform_int_distribution<std::size_t>(0, clip.size() - L)(rng);
    } else {
      crop.tiled = true;
      crop.offset = std::uniform_int_distribution<std::size_t>(0, clip.size() - 1)(rng);
    }
    const std::size_t r = std::min(ramp_len, L / 2);
    for (std::size_t k = 0; k < L; ++k) {
      const double c = clip[(crop.offset + k) % clip.size()];
      double a = 1.0;
      if (k < r) a = (static_cast<double>(k) + 0.5) / static_cast<double>(r);
      else if (k >= L - r) a = (static_cast<double>(L - k) - 0.5) / static_cast<double>(r);
      double& y = out.samples[s.start + k];
      y = a == 1.0 ? c : (1.0 - a) * y + a * c;
    }
    if (crops) crops->push_back(crop);
  }
  return out;
}

Waveform build_noise_track(const SilenceBank& bank, std::size_t target_len, Rng& rng, double overlap_ms) {
  bank.validate();
  std::vector<double> levels;
  for (const auto& c : bank.clips) levels.push_back(rms(c.samples));
  double target_rms = 0.0;
  for (double l : levels) target_rms += l;
  target_rms /= static_cast<double>(levels.size());
  std::vector<std::vector<double>> clips;
  for (std::size_t i = 0; i < bank.clips.size(); ++i) {
    std::vector<double> c = bank.clips[i].samples;
    if (levels[i] > 0.0)
      for (double& v : c) v *= target_rms / levels[i];
    clips.push_back(std::move(c));
  }

  std::uniform_int_distribution<std::size_t> pick(0, clips.size() - 1);
  const std::size_t overlap = ms_to_samples(overlap_ms, bank.sample_rate());
  Waveform out{clips[pick(rng)], bank.sample_rate()};
  auto& track = out.samples;
  while (track.size() < target_len) {
    const auto& next = clips[pick(rng)];
    const std::size_t L = std::min({overlap, track.size(), next.size() - 1});
    const std::size_t base = track.size() - L;
    for (std::size_t k = 0; k < L; ++k) {
      const double u = L == 1 ? 0.5 : static_cast<double>(k) / static_cast<double>(L - 1);
      track[base + k] = track[base + k] * fade_out_gain(u) + next[k] * fade_in_gain(u);
    }
    track.insert(track.end(), next.begin() + static_cast<std::ptrdiff_t>(L), next.end());
  }
  track.resize(target_len);
  return out;
}

Waveform add_global_noise(const Waveform& w, const Waveform& noise, double snr_db, NoiseReport* report) {
  if (noise.size() < w.size())
    throw std::invalid_argument("noise track (" + std::to_string(noise.size()) + ") shorter than signal (" +
                                std::to_string(w.size()) + ")");
  const double signal = rms(w.samples);
  if (!(signal > 0.0)) throw std::invalid_argument("silent input: SNR undefined");
  const std::span<const double> n(noise.samples.data(), w.size());
  const double noise_rms = rms(n);
  if (!(noise_rms > 0.0)) throw std::invalid_argument("noise has zero RMS");
  const double alpha = signal / (noise_rms * std::pow(10.0, snr_db / 20.0));
  Waveform out{std::vector<double>(w.size()), w.sample_rate};
  std::size_t clipped = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double y = w.samples[i] + alpha * n[i];
    if (y > 1.0 || y < -1.0) ++clipped;
    out.samples[i] = std::clamp(y, -1.0, 1.0);
  }
  if (report) {
    report->alpha = alpha;
    report->snr_db = 20.0 * std::log10(signal / (alpha * noise_rms));
    report->clip_fraction = static_cast<double>(clipped) / static_cast<double>(w.size());
  }
  return out;
}

SilenceBank harvest_silence(std::span<const Waveform> recordings, const VadOptions& options) {
  SilenceBank bank;
  if (recordings.empty()) return bank;
  const int sr = recordings.front().sample_rate;
  for (const auto& rec : recordings) {
    const Waveform& w = rec.sample_rate == sr ? rec : resample(rec, sr);
    const std::size_t min_len = ms_to_samples(kMinBankClipMs, sr);
    for (const auto& s : detect_silence(w, options)) {
      if (s.length() < min_len) continue;
      bank.clips.push_back({std::vector<double>(w.samples.begin() + static_cast<std::ptrdiff_t>(s.start),
                                                w.samples.begin() + static_cast<std::ptrdiff_t>(s.end)),
                            sr});
    }
  }
  return bank;
}

SilenceBank load_bank(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw MissingFileError("bank directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  SilenceBank bank;
  for (const auto& f : files) bank.clips.push_back(load_wav(f));
  try {
    bank.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(dir.string() + ": " + e.what());
  }
  return bank;
}

}  // namespace vc
