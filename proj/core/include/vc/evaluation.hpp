#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vc/audio.hpp"

namespace vc {

enum class TrialLabel { bonafide, spoof };

struct TrialEntry {
  std::string path;
  TrialLabel label = TrialLabel::bonafide;
};

// Higher score = more bonafide-like.
struct ScoreRecord {
  std::string path;
  double score = 0.0;
};

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

// A trial is accepted as bonafide when score >= threshold. The operating
// points of every distinct threshold (plus -inf and +inf) are swept and the
// false-acceptance / false-rejection crossing is linearly interpolated
// between the two neighbouring points.
EerResult compute_eer(std::span<const double> bonafide, std::span<const double> spoof);
// Joins scores to trials by path. Throws std::invalid_argument on missing,
// duplicate or non-finite scores and on single-class trial lists.
EerResult compute_eer(std::span<const ScoreRecord> scores, std::span<const TrialEntry> trials);

inline constexpr double kNoSilenceScore = 0.5;
inline constexpr double kSilenceFractionWeight = 0.25;

// Stand-in silence detector: with 20 ms frames at a 10 ms hop, silent frames
// are those below -45 dBFS. The score is the mean spectral flatness of the
// silent frames (0 for exactly zero frames) minus 0.25 times the silent
// fraction; kNoSilenceScore when no frame is silent.
double silence_baseline_score(const Waveform& w);

// "path<TAB>{bonafide|spoof}" and "path<TAB>score" line formats.
std::vector<TrialEntry> read_trials(const std::filesystem::path& path);
std::vector<ScoreRecord> read_scores(const std::filesystem::path& path);
void write_scores(const std::filesystem::path& path, std::span<const ScoreRecord> scores);

}  // namespace vc
