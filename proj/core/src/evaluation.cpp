#include "vc/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "vc/error.hpp"
#include "vc/postprocess.hpp"

namespace vc {

namespace {

struct OperatingPoint {
  double threshold;
  double far;
  double frr;
};

std::vector<std::string> split_tab(const std::string& line) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const auto tab = line.find('\t', pos);
    out.push_back(line.substr(pos, tab - pos));
    if (tab == std::string::npos) break;
    pos = tab + 1;
  }
  return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFileError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

}  // namespace

EerResult compute_eer(std::span<const double> bonafide, std::span<const double> spoof) {
  if (bonafide.empty() || spoof.empty()) throw std::invalid_argument("EER needs both bonafide and spoof trials");
  std::vector<double> b(bonafide.begin(), bonafide.end()), s(spoof.begin(), spoof.end());
  for (double v : b)
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite score");
  for (double v : s)
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite score");
  std::sort(b.begin(), b.end());
  std::sort(s.begin(), s.end());
  std::vector<double> thresholds(b);
  thresholds.insert(thresholds.end(), s.begin(), s.end());
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  const double inf = std::numeric_limits<double>::infinity();
  const double nb = static_cast<double>(b.size()), ns = static_cast<double>(s.size());
  std::vector<OperatingPoint> points{{-inf, 1.0, 0.0}};
  for (double t : thresholds) {
    const auto rejected = std::lower_bound(b.begin(), b.end(), t) - b.begin();
    const auto accepted = s.end() - std::lower_bound(s.begin(), s.end(), t);
    points.push_back({t, static_cast<double>(accepted) / ns, static_cast<double>(rejected) / nb});
  }
  points.push_back({inf, 0.0, 1.0});

  // far - frr falls from +1 to -1 along the sweep.
  for (std::size_t k = 0; k + 1 < points.size(); ++k) {
    const auto& p = points[k];
    const auto& q = points[k + 1];
    const double dp = p.far - p.frr, dq = q.far - q.frr;
    if (dp == 0.0) return {p.far, p.threshold};
    if (dp > 0.0 && dq <= 0.0) {
      const double lambda = dp / (dp - dq);
      const double eer = p.far + lambda * (q.far - p.far);
      double threshold;
      if (std::isinf(p.threshold)) threshold = q.threshold;
      else if (std::isinf(q.threshold)) threshold = p.threshold;
      else threshold = p.threshold + lambda * (q.threshold - p.threshold);
      return {eer, threshold};
    }
  }
  return {points.back().far, points.back().threshold};  // unreachable: the last point has far - frr = -1
}

EerResult compute_eer(std::span<const ScoreRecord> scores, std::span<const TrialEntry> trials) {
  std::map<std::string, double> by_path;
  for (const auto& r : scores) {
    if (!by_path.emplace(r.path, r.score).second) throw std::invalid_argument("duplicate score for " + r.path);
  }
  std::map<std::string, int> seen;
  std::vector<double> bonafide, spoof;
  for (const auto& t : trials) {
    if (seen[t.path]++) throw std::invalid_argument("duplicate trial " + t.path);
    auto it = by_path.find(t.path);
    if (it == by_path.end()) throw std::invalid_argument("missing score for " + t.path);
    (t.label == TrialLabel::bonafide ? bonafide : spoof).push_back(it->second);
  }
  if (bonafide.empty() || spoof.empty())
    throw std::invalid_argument("trial list holds a single class; EER is undefined");
  return compute_eer(bonafide, spoof);
}

double silence_baseline_score(const Waveform& w) {
  validate(w);
  const std::size_t frame = static_cast<std::size_t>(std::llround(0.020 * w.sample_rate));
  const std::size_t hop = static_cast<std::size_t>(std::llround(0.010 * w.sample_rate));
  std::size_t fft = 1;
  while (fft < frame) fft <<= 1;
  const std::size_t len = w.size();
  const std::size_t n_frames = len <= frame ? 1 : 1 + (len - frame) / hop;
  std::size_t silent = 0;
  double flatness_sum = 0.0;
  for (std::size_t k = 0; k < n_frames; ++k) {
    const std::size_t start = k * hop;
    const std::span<const double> x(w.samples.data() + start, std::min(frame, len - start));
    if (!(frame_level_db(x) < -45.0)) continue;
    ++silent;
    if (rms(x) == 0.0) continue;
    const auto power = power_spectrum(x, fft);
    double log_sum = 0.0, sum = 0.0;
    for (double p : power) {
      log_sum += std::log(p + 1e-300);
      sum += p;
    }
    const double n = static_cast<double>(power.size());
    flatness_sum += sum > 0.0 ? std::exp(log_sum / n) / (sum / n) : 0.0;
  }
  if (silent == 0) return kNoSilenceScore;
  return flatness_sum / static_cast<double>(silent) -
         kSilenceFractionWeight * static_cast<double>(silent) / static_cast<double>(n_frames);
}

std::vector<TrialEntry> read_trials(const std::filesystem::path& path) {
  std::vector<TrialEntry> out;
  std::size_t lineno = 0;
  for (const auto& line : read_lines(path)) {
    ++lineno;
    auto f = split_tab(line);
    if (f.size() != 2 || f[0].empty())
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected path<TAB>label");
    if (f[1] == "bonafide") out.push_back({f[0], TrialLabel::bonafide});
    else if (f[1] == "spoof") out.push_back({f[0], TrialLabel::spoof});
    else throw DataError(path.string() + ":" + std::to_string(lineno) + ": unknown label '" + f[1] + "'");
  }
  return out;
}

std::vector<ScoreRecord> read_scores(const std::filesystem::path& path) {
  std::vector<ScoreRecord> out;
  std::size_t lineno = 0;
  for (const auto& line : read_lines(path)) {
    ++lineno;
    auto f = split_tab(line);
    double v = 0.0;
    bool ok = f.size() == 2 && !f[0].empty();
    if (ok) {
      try {
        std::size_t used = 0;
        v = std::stod(f[1], &used);
        ok = used == f[1].size() && std::isfinite(v);
      } catch (const std::exception&) {
        ok = false;
      }
    }
    if (!ok) throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected path<TAB>finite score");
    out.push_back({f[0], v});
  }
  return out;
}

void write_scores(const std::filesystem::path& path, std::span<const ScoreRecord> scores) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  for (const auto& s : scores) out << s.path << '\t' << s.score << '\n';
}

}  // namespace vc
