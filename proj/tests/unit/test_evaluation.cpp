#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "support/oracles.hpp"
#include "support/testing.hpp"
#include "vc/error.hpp"
#include "vc/evaluation.hpp"

using namespace vc;
using vc::testkit::random_trials;

TEST(Eer, MatchesBruteForceSweep) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    auto [b, s] = random_trials(rng);
    EXPECT_NEAR(compute_eer(b, s).eer, testkit::eer_bruteforce(b, s), 1e-12) << "trial " << trial;
  }
}

TEST(Eer, ToyListWithOneInversion) {
  const std::vector<double> b{0.9, 0.8, 0.3}, s{0.4, 0.2, 0.1};
  auto r = compute_eer(b, s);
  EXPECT_NEAR(r.eer, 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(r.eer, testkit::eer_bruteforce(b, s), 1e-15);
  EXPECT_GE(r.threshold, 0.3);
  EXPECT_LE(r.threshold, 0.4);
}

TEST(Eer, SeparableAndConstantScores) {
  EXPECT_EQ(compute_eer(std::vector<double>{2, 3, 4}, std::vector<double>{-1, 0, 1}).eer, 0.0);
  EXPECT_EQ(compute_eer(std::vector<double>{1, 1}, std::vector<double>{1, 1, 1}).eer, 0.5);
  EXPECT_EQ(compute_eer(std::vector<double>{0, 0}, std::vector<double>{5, 6}).eer, 1.0);
}

TEST(Eer, InvariantUnderIncreasingTransformAndSymmetric) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    auto [b, s] = random_trials(rng);
    const double e = compute_eer(b, s).eer;
    auto f = [](double x) { return std::exp(0.5 * x) + x * x * x; };
    std::vector<double> fb, fs, nb, ns;
    for (double x : b) fb.push_back(f(x)), ns.push_back(-x);
    for (double x : s) fs.push_back(f(x)), nb.push_back(-x);
    EXPECT_NEAR(compute_eer(fb, fs).eer, e, 1e-12);
    EXPECT_NEAR(compute_eer(nb, ns).eer, e, 1e-12);
  }
}

TEST(Eer, JoinsScoresToTrialsAndValidates) {
  const std::vector<TrialEntry> trials{{"a", TrialLabel::bonafide}, {"b", TrialLabel::spoof}, {"c", TrialLabel::spoof}};
  const std::vector<ScoreRecord> scores{{"c", 0.1}, {"a", 0.9}, {"b", 0.2}};
  EXPECT_EQ(compute_eer(scores, trials).eer, 0.0);
  const std::vector<ScoreRecord> dup{{"a", 0.9}, {"a", 0.1}, {"b", 0.2}, {"c", 0.1}};
  EXPECT_THROW(compute_eer(dup, trials), std::invalid_argument);
  const std::vector<ScoreRecord> missing{{"a", 0.9}, {"b", 0.2}};
  EXPECT_THROW(compute_eer(missing, trials), std::invalid_argument);
  const std::vector<TrialEntry> one_class{{"b", TrialLabel::spoof}, {"c", TrialLabel::spoof}};
  EXPECT_THROW(compute_eer(scores, one_class), std::invalid_argument);
  const std::vector<TrialEntry> dup_trial{{"a", TrialLabel::bonafide}, {"a", TrialLabel::spoof}};
  EXPECT_THROW(compute_eer(scores, dup_trial), std::invalid_argument);
  EXPECT_THROW(compute_eer(std::vector<double>{NAN}, std::vector<double>{1.0}), std::invalid_argument);
}

TEST(SilenceBaseline, RoomSilenceScoresAboveDigitalZero) {
  std::mt19937_64 rng(3);
  Waveform speech = testkit::voiced(24000, 16000);
  Waveform digital = speech;
  std::fill(digital.samples.begin() + 8000, digital.samples.begin() + 16000, 0.0);
  Waveform room = digital;
  Waveform hiss = testkit::noise(8000, 0.001, rng, 16000);
  std::copy(hiss.samples.begin(), hiss.samples.end(), room.samples.begin() + 8000);
  EXPECT_LT(silence_baseline_score(digital), silence_baseline_score(room));
  EXPECT_EQ(silence_baseline_score(room), silence_baseline_score(Waveform(room)));
}

TEST(SilenceBaseline, NoSilenceGivesDefault) {
  std::mt19937_64 rng(4);
  EXPECT_EQ(silence_baseline_score(testkit::noise(16000, 0.2, rng, 16000)), kNoSilenceScore);
  EXPECT_THROW(silence_baseline_score(Waveform{{}, 16000}), std::invalid_argument);
}

TEST(ScoreFiles, RoundTripAndMalformedLines) {
  const auto dir = std::filesystem::temp_directory_path();
  const std::vector<ScoreRecord> scores{{"x/a.wav", 0.1 + 0.2}, {"b.wav", -3e-300}};
  write_scores(dir / "vc_scores.txt", scores);
  auto back = read_scores(dir / "vc_scores.txt");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].path, "x/a.wav");
  EXPECT_EQ(back[0].score, 0.1 + 0.2);
  EXPECT_EQ(back[1].score, -3e-300);
  std::ofstream(dir / "vc_scores.txt") << "a.wav\tnan\n";
  EXPECT_THROW(read_scores(dir / "vc_scores.txt"), DataError);
  std::ofstream(dir / "vc_trials.txt") << "a.wav\tbonafide\nb.wav\tfake\n";
  EXPECT_THROW(read_trials(dir / "vc_trials.txt"), DataError);
  std::ofstream(dir / "vc_trials.txt") << "a.wav\tbonafide\nb.wav\tspoof\n";
  EXPECT_EQ(read_trials(dir / "vc_trials.txt").size(), 2u);
  EXPECT_THROW(read_trials(dir / "vc_missing_trials.txt"), MissingFileError);
  std::filesystem::remove(dir / "vc_scores.txt");
  std::filesystem::remove(dir / "vc_trials.txt");
}
