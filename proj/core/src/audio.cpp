#include "vc/audio.hpp"

#include <fftw3.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

#include "vc/error.hpp"

namespace vc {

namespace {

// ---------------------------------------------------------------------------
// FFTW plans. Planning is not thread-safe, execution with new-array calls is.

struct PlanPair {
  fftw_plan forward = nullptr;
  fftw_plan inverse = nullptr;
};

const PlanPair& plans_for(std::size_t n) {
  static std::mutex mutex;
  static std::map<std::size_t, PlanPair> cache;
  std::lock_guard lock(mutex);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  std::vector<double> re(n);
  std::vector<fftw_complex> spec(n / 2 + 1);
  PlanPair p;
  const int size = static_cast<int>(n);
  p.forward = fftw_plan_dft_r2c_1d(size, re.data(), spec.data(), FFTW_ESTIMATE | FFTW_UNALIGNED);
  p.inverse = fftw_plan_dft_c2r_1d(size, spec.data(), re.data(),
                                   FFTW_ESTIMATE | FFTW_UNALIGNED | FFTW_DESTROY_INPUT);
  return cache.emplace(n, p).first->second;
}

std::size_t mirror(long j, std::size_t len) {
  if (len == 1) return 0;
  const long period = 2 * static_cast<long>(len) - 2;
  long m = j % period;
  if (m < 0) m += period;
  if (m >= static_cast<long>(len)) m = period - m;
  return static_cast<std::size_t>(m);
}

// Frame geometry and window shared by the plain and differentiable paths.
class Stft {
 public:
  Stft(const FeatureConfig& cfg, std::size_t length) : cfg_(cfg), length_(length) {
    cfg.validate();
    if (length < cfg.frame_length)
      throw std::invalid_argument("waveform of " + std::to_string(length) +
                                  " samples is shorter than one frame (" +
                                  std::to_string(cfg.frame_length) + ")");
    frames_ = cfg.frames_for(length);
    window_.assign(cfg.fft_size, 0.0);
    const std::size_t offset = (cfg.fft_size - cfg.frame_length) / 2;
    for (std::size_t i = 0; i < cfg.frame_length; ++i)
      window_[offset + i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                                 static_cast<double>(cfg.frame_length));
    left_ = (cfg.fft_size - cfg.frame_hop) / 2;
  }

  std::size_t frames() const { return frames_; }
  std::size_t bins() const { return cfg_.fft_bins(); }

  // Source sample index for position i of frame f.
  std::size_t source(std::size_t f, std::size_t i) const {
    return mirror(static_cast<long>(f * cfg_.frame_hop + i) - static_cast<long>(left_), length_);
  }

  // Complex spectrum of every frame, row-major [frames x bins].
  std::vector<std::complex<double>> analyze(const double* x) const {
    const std::size_t N = cfg_.fft_size, B = bins();
    std::vector<std::complex<double>> out(frames_ * B);
    std::vector<double> buf(N);
    const auto& plan = plans_for(N);
    for (std::size_t f = 0; f < frames_; ++f) {
      for (std::size_t i = 0; i < N; ++i) buf[i] = window_[i] == 0.0 ? 0.0 : window_[i] * x[source(f, i)];
      fftw_execute_dft_r2c(plan.forward, buf.data(),
                           reinterpret_cast<fftw_complex*>(out.data() + f * B));
    }
    return out;
  }

  // Adds d(loss)/d(x) given d(loss)/d|X| for every frame/bin.
  void backprop_magnitude(const std::vector<std::complex<double>>& spec,
                          const std::vector<double>& grad_mag, double* grad_x) const {
    const std::size_t N = cfg_.fft_size, B = bins();
    std::vector<std::complex<double>> half(B);
    std::vector<double> buf(N);
    const auto& plan = plans_for(N);
    for (std::size_t f = 0; f < frames_; ++f) {
      for (std::size_t b = 0; b < B; ++b) {
        const std::complex<double> X = spec[f * B + b];
        const double mag = std::abs(X);
        std::complex<double> g = mag > 0.0 ? grad_mag[f * B + b] * X / mag : 0.0;
        // c2r doubles interior bins through Hermitian symmetry.
        if (b != 0 && b != B - 1) g *= 0.5;
        half[b] = g;
      }
      fftw_execute_dft_c2r(plan.inverse, reinterpret_cast<fftw_complex*>(half.data()), buf.data());
      for (std::size_t i = 0; i < N; ++i)
        if (window_[i] != 0.0) grad_x[source(f, i)] += window_[i] * buf[i];
    }
  }

 private:
  FeatureConfig cfg_;
  std::size_t length_;
  std::size_t frames_ = 0;
  std::size_t left_ = 0;
  std::vector<double> window_;
};

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::uint32_t read_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}
std::uint16_t read_u16(const unsigned char* p) { return std::uint16_t(p[0] | (p[1] << 8)); }

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>(v >> 8));
}

}  // namespace

Tensor Waveform::to_tensor() const { return Tensor::from({1, 1, samples.size()}, samples); }

Waveform Waveform::from_tensor(const Tensor& t, int sample_rate) {
  return {{t.values().begin(), t.values().end()}, sample_rate};
}

bool is_supported_rate(int sample_rate) {
  return sample_rate == 16000 || sample_rate == 24000 || sample_rate == 48000;
}

void validate(const Waveform& w) {
  if (w.samples.empty()) throw std::invalid_argument("empty waveform");
  if (!is_supported_rate(w.sample_rate))
    throw std::invalid_argument("unsupported sample rate " + std::to_string(w.sample_rate));
  for (double s : w.samples)
    if (!std::isfinite(s)) throw std::invalid_argument("non-finite waveform sample");
}

Waveform load_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t size = bytes.size();
  if (size < 12) throw TruncatedFileError(path.string() + ": truncated RIFF header");
  if (std::memcmp(p, "RIFF", 4) != 0 || std::memcmp(p + 8, "WAVE", 4) != 0)
    throw UnsupportedFormatError(path.string() + ": not a RIFF/WAVE file");

  bool have_fmt = false;
  int rate = 0;
  std::size_t pos = 12;
  while (true) {
    if (pos + 8 > size) throw TruncatedFileError(path.string() + ": missing data chunk");
    const std::uint32_t chunk = read_u32(p + pos + 4);
    const unsigned char* body = p + pos + 8;
    if (std::memcmp(p + pos, "fmt ", 4) == 0) {
      if (chunk < 16 || pos + 8 + 16 > size)
        throw TruncatedFileError(path.string() + ": truncated fmt chunk");
      const std::uint16_t format = read_u16(body);
      const std::uint16_t channels = read_u16(body + 2);
      const std::uint16_t bits = read_u16(body + 14);
      if (format != 1 || bits != 16)
        throw UnsupportedFormatError(path.string() + ": only 16-bit PCM is supported");
      if (channels != 1)
        throw UnsupportedFormatError(path.string() + ": expected mono, got " +
                                     std::to_string(channels) + " channels");
      rate = static_cast<int>(read_u32(body + 4));
      have_fmt = true;
    } else if (std::memcmp(p + pos, "data", 4) == 0) {
      if (!have_fmt) throw UnsupportedFormatError(path.string() + ": data before fmt chunk");
      if (pos + 8 + chunk > size) throw TruncatedFileError(path.string() + ": truncated data chunk");
      if (!is_supported_rate(rate))
        throw UnsupportedFormatError(path.string() + ": unsupported sample rate " + std::to_string(rate));
      Waveform w;
      w.sample_rate = rate;
      w.samples.resize(chunk / 2);
      for (std::size_t i = 0; i < w.samples.size(); ++i)
        w.samples[i] = static_cast<std::int16_t>(read_u16(body + 2 * i)) / 32768.0;
      if (w.samples.empty()) throw DataError(path.string() + ": no samples");
      return w;
    }
    pos += 8 + chunk + (chunk & 1);
  }
}

void save_wav(const std::filesystem::path& path, const Waveform& w) {
  std::string out;
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  out.append("RIFF");
  put_u32(out, 36 + data_bytes);
  out.append("WAVEfmt ");
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out.append("data");
  put_u32(out, data_bytes);
  for (double s : w.samples) {
    const double code = std::clamp(std::round(s * 32768.0), -32768.0, 32767.0);
    put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(code)));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

void FeatureConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("FeatureConfig: " + m); };
  if (sample_rate <= 0) fail("sample_rate must be positive");
  if (fft_size < 4 || (fft_size & (fft_size - 1)) != 0) fail("fft_size must be a power of two");
  if (frame_hop == 0 || frame_hop > frame_length || frame_length > fft_size)
    fail("require 0 < frame_hop <= frame_length <= fft_size");
  if (n_mels == 0) fail("n_mels must be positive");
  if (!(mel_fmin >= 0.0 && mel_fmin < mel_fmax && mel_fmax <= sample_rate / 2.0))
    fail("require 0 <= mel_fmin < mel_fmax <= sample_rate / 2");
}

Tensor LinearSpectrogram::to_tensor() const {
  std::vector<double> v(magnitudes.size());
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t b = 0; b < bins; ++b) v[b * frames + f] = magnitudes[f * bins + b];
  return Tensor::from({1, bins, frames}, std::move(v));
}

Tensor MelSpectrogram::to_tensor() const {
  std::vector<double> v(values.size());
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t m = 0; m < n_mels; ++m) v[m * frames + f] = values[f * n_mels + m];
  return Tensor::from({1, n_mels, frames}, std::move(v));
}

LinearSpectrogram linear_spectrogram(const Waveform& w, const FeatureConfig& cfg) {
  Stft stft(cfg, w.size());
  auto spec = stft.analyze(w.samples.data());
  LinearSpectrogram out;
  out.frames = stft.frames();
  out.bins = stft.bins();
  out.frame_hop = cfg.frame_hop;
  out.frame_length = cfg.frame_length;
  out.magnitudes.resize(spec.size());
  for (std::size_t i = 0; i < spec.size(); ++i) out.magnitudes[i] = std::abs(spec[i]);
  return out;
}

std::vector<double> mel_filterbank(const FeatureConfig& cfg) {
  cfg.validate();
  const std::size_t B = cfg.fft_bins(), M = cfg.n_mels;
  const double lo = hz_to_mel(cfg.mel_fmin), hi = hz_to_mel(cfg.mel_fmax);
  std::vector<double> edges(M + 2);
  for (std::size_t i = 0; i < M + 2; ++i)
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(M + 1));
  std::vector<double> fb(M * B, 0.0);
  const double bin_hz = static_cast<double>(cfg.sample_rate) / static_cast<double>(cfg.fft_size);
  for (std::size_t m = 0; m < M; ++m) {
    const double f0 = edges[m], f1 = edges[m + 1], f2 = edges[m + 2];
    const double height = 2.0 / (f2 - f0);
    double row = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      const double f = static_cast<double>(b) * bin_hz;
      double w = 0.0;
      if (f > f0 && f <= f1) w = (f - f0) / (f1 - f0);
      else if (f > f1 && f < f2) w = (f2 - f) / (f2 - f1);
      fb[m * B + b] = w * height;
      row += w;
    }
    if (row <= 0.0)
      throw std::invalid_argument("mel filter " + std::to_string(m) +
                                  " covers no FFT bin; reduce n_mels or raise fft_size");
  }
  return fb;
}

MelSpectrogram mel_spectrogram(const LinearSpectrogram& lin, const FeatureConfig& cfg) {
  if (lin.bins != cfg.fft_bins())
    throw std::invalid_argument("mel_spectrogram: spectrogram has " + std::to_string(lin.bins) +
                                " bins, filterbank expects " + std::to_string(cfg.fft_bins()));
  const auto fb = mel_filterbank(cfg);
  MelSpectrogram out;
  out.frames = lin.frames;
  out.n_mels = cfg.n_mels;
  out.values.resize(lin.frames * cfg.n_mels);
  for (std::size_t f = 0; f < lin.frames; ++f)
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      double acc = 0.0;
      for (std::size_t b = 0; b < lin.bins; ++b) acc += fb[m * lin.bins + b] * lin.at(f, b);
      out.values[f * cfg.n_mels + m] = std::log(std::max(acc, kLogMelFloor));
    }
  return out;
}

MelSpectrogram mel_spectrogram(const Waveform& w, const FeatureConfig& cfg) {
  return mel_spectrogram(linear_spectrogram(w, cfg), cfg);
}

Tensor log_mel(const Tensor& waves, const FeatureConfig& cfg) {
  const Shape ws = waves.shape();
  if (ws.c != 1) throw std::invalid_argument("log_mel expects [N, 1, T] input, got " + ws.str());
  Stft stft(cfg, ws.t);
  const auto fb = mel_filterbank(cfg);
  const std::size_t F = stft.frames(), B = stft.bins(), M = cfg.n_mels;

  std::vector<std::vector<std::complex<double>>> spectra(ws.n);
  std::vector<double> mel_linear(ws.n * M * F);
  std::vector<double> out(ws.n * M * F);
  for (std::size_t n = 0; n < ws.n; ++n) {
    spectra[n] = stft.analyze(waves.values().data() + n * ws.t);
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t m = 0; m < M; ++m) {
        double acc = 0.0;
        for (std::size_t b = 0; b < B; ++b) acc += fb[m * B + b] * std::abs(spectra[n][f * B + b]);
        mel_linear[(n * M + m) * F + f] = acc;
        out[(n * M + m) * F + f] = std::log(std::max(acc, kLogMelFloor));
      }
  }
  auto nx = waves.node();
  return make_result(
      {ws.n, M, F}, std::move(out), {waves},
      [nx, stft, fb, spectra = std::move(spectra), mel_linear = std::move(mel_linear), F, B,
       M](detail::Node& self) {
        auto& gx = nx->grad_buffer();
        const std::size_t T = nx->shape.t;
        std::vector<double> grad_mag(F * B);
        for (std::size_t n = 0; n < nx->shape.n; ++n) {
          std::fill(grad_mag.begin(), grad_mag.end(), 0.0);
          for (std::size_t m = 0; m < M; ++m)
            for (std::size_t f = 0; f < F; ++f) {
              const std::size_t i = (n * M + m) * F + f;
              if (mel_linear[i] <= kLogMelFloor) continue;
              const double g = self.grad[i] / mel_linear[i];
              for (std::size_t b = 0; b < B; ++b) grad_mag[f * B + b] += g * fb[m * B + b];
            }
          stft.backprop_magnitude(spectra[n], grad_mag, gx.data() + n * T);
        }
      });
}

Waveform resample(const Waveform& w, int target_rate) {
  if (target_rate <= 0) throw std::invalid_argument("resample: invalid target rate");
  if (target_rate == w.sample_rate) return w;
  const long g = std::gcd(w.sample_rate, target_rate);
  const long up = target_rate / g, down = w.sample_rate / g;
  // Cutoff in input-sample units (cycles per input sample).
  const double cutoff = 0.5 * 0.95 * std::min(1.0, static_cast<double>(up) / static_cast<double>(down));
  const double half_width = 16.0 / cutoff;  // taps on each side, in input samples
  const std::size_t out_len =
      static_cast<std::size_t>((static_cast<long>(w.size()) * up + down - 1) / down);
  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(out_len);
  const long n_in = static_cast<long>(w.size());
  for (std::size_t j = 0; j < out_len; ++j) {
    const double center = static_cast<double>(j) * static_cast<double>(down) / static_cast<double>(up);
    const long k0 = static_cast<long>(std::ceil(center - half_width));
    const long k1 = static_cast<long>(std::floor(center + half_width));
    double acc = 0.0;
    for (long k = std::max(0L, k0); k <= std::min(n_in - 1, k1); ++k) {
      const double x = static_cast<double>(k) - center;
      const double arg = 2.0 * cutoff * x;
      const double sinc = std::abs(arg) < 1e-12 ? 1.0 : std::sin(std::numbers::pi * arg) / (std::numbers::pi * arg);
      const double win = 0.5 + 0.5 * std::cos(std::numbers::pi * x / half_width);
      acc += w.samples[static_cast<std::size_t>(k)] * 2.0 * cutoff * sinc * win;
    }
    out.samples[j] = acc;
  }
  return out;
}

double rms(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return std::sqrt(acc / static_cast<double>(x.size()));
}


std::vector<double> power_spectrum(std::span<const double> frame, std::size_t fft_size) {
  if (fft_size == 0 || (fft_size & (fft_size - 1)) != 0 || frame.size() > fft_size)
    throw std::invalid_argument("power_spectrum: fft_size must be a power of two >= frame length");
  const PlanPair& plan = plans_for(fft_size);
  std::vector<double> buf(fft_size, 0.0);
  const std::size_t n = frame.size();
  for (std::size_t i = 0; i < n; ++i)
    buf[i] = frame[i] * (0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                              static_cast<double>(n)));
  std::vector<std::complex<double>> spec(fft_size / 2 + 1);
  fftw_execute_dft_r2c(plan.forward, buf.data(), reinterpret_cast<fftw_complex*>(spec.data()));
  std::vector<double> out(spec.size());
  for (std::size_t k = 0; k < spec.size(); ++k) out[k] = std::norm(spec[k]);
  return out;
}

}  // namespace vc
