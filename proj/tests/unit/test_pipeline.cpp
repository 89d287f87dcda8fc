#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include <json.hpp>

#include "support/testing.hpp"
#include "vc/checkpoint.hpp"
#include "vc/config.hpp"
#include "vc/error.hpp"
#include "vc/pipeline.hpp"

using namespace vc;
using vc::testkit::tiny_config;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("vc_pipeline_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

Utterance utterance(const TrainConfig& c, std::size_t samples = 4000, std::size_t speaker = 0, double f0 = 140.0) {
  return prepare_utterance(testkit::voiced(samples, c.features.sample_rate, f0), speaker, c.features);
}

bool same(const LossReport& a, const LossReport& b) {
  return a.kl == b.kl && a.adv_d == b.adv_d && a.adv_g == b.adv_g && a.fm == b.fm && a.recon == b.recon &&
         a.total == b.total;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

TEST(Config, TextRoundTrip) {
  for (const TrainConfig& c : {TrainConfig{}, TrainConfig::desk(), tiny_config()}) {
    const std::string text = to_string(c);
    EXPECT_EQ(to_string(parse_config(text)), text);
  }
}

TEST(Config, PresetAppliesBeforeExplicitWeights) {
  for (const char* text : {"loss_preset = practical\nweight_fm = 3\n", "weight_fm = 3\nloss_preset = practical\n"}) {
    TrainConfig p = parse_config(text);
    EXPECT_EQ(p.weights.recon, 45.0);
    EXPECT_EQ(p.weights.fm, 3.0);
    EXPECT_EQ(p.weights.kl, 1.0);
  }
  EXPECT_EQ(parse_config("").weights.recon, 1.0);
}

TEST(Config, ShippedDeskFileMatchesDesk) {
  TrainConfig file = load_config(std::filesystem::path(VC_SOURCE_DIR) / "configs" / "desk.cfg");
  EXPECT_EQ(file.weights.recon, 45.0);
  TrainConfig expected = TrainConfig::desk();
  expected.loss_preset = "practical";
  expected.weights = LossWeights::practical();
  expected.total_steps = file.total_steps;
  expected.log_every = file.log_every;
  expected.checkpoint_every = file.checkpoint_every;
  EXPECT_EQ(to_string(file), to_string(expected));
}

TEST(Config, RejectsMalformedInput) {
  for (const char* text : {"bogus_key = 1\n", "seed = 1\nseed = 2\n", "no equals sign\n", "segment_frames = -3\n",
                           "lr_g = fast\n", "loss_preset = heroic\n", "upsample_factors = 8,8\n",
                           "freeze_linguistic = maybe\n", "conformer_kernel = 4\n"})
    EXPECT_THROW(parse_config(text), ConfigError) << text;
  EXPECT_THROW(load_config("/nonexistent/vc.cfg"), ConfigError);
  EXPECT_NO_THROW(parse_config("# comment only\n\nseed = 7 # trailing\n"));
}

// ---------------------------------------------------------------------------
// Model

TEST(Model, SpeakersAndParameters) {
  EXPECT_THROW(VoiceConversionModel(tiny_config(), {}), ConfigError);
  EXPECT_THROW(VoiceConversionModel(tiny_config(), {"a", "a"}), ConfigError);
  VoiceConversionModel m(tiny_config(), {"alice", "bob"});
  EXPECT_EQ(m.speaker_index("bob"), 1u);
  EXPECT_THROW(m.speaker_index("carol"), ConfigError);

  std::set<std::string> names;
  for (const auto& p : m.parameters()) EXPECT_TRUE(names.insert(p.name).second) << p.name;
  EXPECT_EQ(m.parameters().size(), m.generator_parameters().size() + m.discriminator_parameters().size());

  TrainConfig frozen = tiny_config();
  frozen.freeze_linguistic = true;
  VoiceConversionModel f(frozen, {"alice"});
  for (const auto& p : f.generator_parameters()) EXPECT_NE(p.name.rfind("linguistic", 0), 0u) << p.name;
}

TEST(Model, PrecomputedFeaturesAreRequiredAndAligned) {
  TrainConfig c = tiny_config();
  c.linguistic_source = LinguisticSource::precomputed;
  VoiceConversionModel m(c, {"a"});
  Utterance u = utterance(c);
  EXPECT_THROW(m.linguistic(u.mel), DataError);
  std::mt19937_64 rng(1);
  LinguisticEmbedding wrong{testkit::random_tensor({1, c.d_g + 1, 10}, rng, 1.0, false)};
  EXPECT_THROW(m.linguistic(u.mel, &wrong), DataError);
  LinguisticEmbedding ppg{testkit::random_tensor({1, c.d_g, 10}, rng, 1.0, false)};
  EXPECT_EQ(m.linguistic(u.mel, &ppg).frames(), u.frames());
}

// ---------------------------------------------------------------------------
// Utterances and segments

TEST(PrepareUtterance, CropsToWholeFramesAndResamples) {
  const TrainConfig c = tiny_config();
  Utterance u = utterance(c, 4000);
  const std::size_t hop = c.features.frame_hop;
  EXPECT_EQ(u.wave.size(), (4000 / hop) * hop);
  EXPECT_EQ(u.frames(), 4000 / hop);
  EXPECT_EQ(u.linear.frames, u.frames());
  Utterance r = prepare_utterance(testkit::voiced(16000, 16000), 0, c.features);
  EXPECT_EQ(r.wave.sample_rate, 24000);
  EXPECT_EQ(r.wave.size(), (24000 / hop) * hop);
  EXPECT_THROW(prepare_utterance(Waveform{std::vector<double>(100, 0.1), 24000}, 0, c.features), DataError);
  EXPECT_THROW(prepare_utterance(Waveform{{}, 24000}, 0, c.features), DataError);
}

TEST(SliceSegments, SamplesMatchLatentWindow) {
  std::mt19937_64 rng(2);
  const std::size_t F = 20, hop = 4, seg = 5;
  LatentSequence z{testkit::random_tensor({1, 3, F}, rng, 1.0, false)};
  Tensor wave = testkit::random_tensor({1, 1, F * hop}, rng, 1.0, false);
  Rng r(3);
  for (int trial = 0; trial < 50; ++trial) {
    auto s = slice_segments(z, wave, seg, hop, r);
    ASSERT_LE(s.start_frame + seg, F);
    ASSERT_EQ(s.wave.shape(), (Shape{1, 1, seg * hop}));
    for (std::size_t i = 0; i < seg * hop; ++i) ASSERT_EQ(s.wave.at(0, 0, i), wave.at(0, 0, s.start_frame * hop + i));
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t t = 0; t < seg; ++t) ASSERT_EQ(s.latent.values.at(0, c, t), z.values.at(0, c, s.start_frame + t));
  }
  EXPECT_THROW(slice_segments(z, wave, F + 1, hop, r), DataError);
  EXPECT_THROW(slice_segments(z, testkit::random_tensor({1, 1, F * hop + 1}, rng), seg, hop, r), std::invalid_argument);
  EXPECT_EQ(slice_segments(z, wave, F, hop, r).start_frame, 0u);
}

TEST(SliceSegments, StartIsUniform) {
  const std::size_t F = 12, seg = 3, positions = F - seg + 1, draws = 20000;
  LatentSequence z{Tensor::zeros({1, 1, F})};
  Tensor wave = Tensor::zeros({1, 1, F});
  Rng r(4);
  std::vector<double> counts(positions, 0.0);
  for (std::size_t i = 0; i < draws; ++i) counts[slice_segments(z, wave, seg, 1, r).start_frame] += 1;
  const double expected = double(draws) / positions;
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  EXPECT_LT(chi2, 27.88);  // chi-square, 9 dof, p = 0.001
}

// ---------------------------------------------------------------------------
// Training

TEST(Trainer, StepsAreReproducible) {
  const TrainConfig c = tiny_config();
  const std::vector<Utterance> batch{utterance(c, 3000), utterance(c, 2600, 1, 180.0)};
  std::vector<LossReport> runs[2];
  for (auto& run : runs) {
    VoiceConversionModel m(c, {"a", "b"});
    Trainer t(m);
    run.push_back(t.train_step(batch));
    run.push_back(t.train_step(batch));
    EXPECT_EQ(t.step(), 2u);
  }
  EXPECT_TRUE(same(runs[0][0], runs[1][0]));
  EXPECT_TRUE(same(runs[0][1], runs[1][1]));
  EXPECT_FALSE(same(runs[0][0], runs[0][1]));
  EXPECT_DOUBLE_EQ(runs[0][0].total, runs[0][0].recon + runs[0][0].kl + runs[0][0].adv_g + runs[0][0].fm);
}

TEST(Trainer, DiscriminatorOnIdenticalPairsSettlesAtHalf) {
  TrainConfig c = tiny_config();
  c.lr_d = 2e-3;
  VoiceConversionModel m(c, {"a"});
  Trainer t(m);
  Tensor real = utterance(c, 2048).wave.to_tensor();
  const double target = 0.5 * static_cast<double>(m.discriminators().count());
  double first = t.discriminator_step(real, real), last = first;
  for (int i = 0; i < 300; ++i) last = t.discriminator_step(real, real);
  EXPECT_LT(std::abs(last - target), std::abs(first - target));
  EXPECT_NEAR(last, target, 0.02 * target);
}

TEST(Trainer, NonFiniteLossThrows) {
  const TrainConfig c = tiny_config();
  VoiceConversionModel m(c, {"a"});
  Trainer t(m);
  Tensor real = utterance(c, 2048).wave.to_tensor();
  std::vector<double> bad(real.values().begin(), real.values().end());
  bad[5] = std::nan("");
  EXPECT_THROW(t.discriminator_step(real, Tensor::from(real.shape(), bad)), NumericalDivergence);
}

TEST(Trainer, EpochDecaysLearningRate) {
  const TrainConfig c = tiny_config();
  VoiceConversionModel m(c, {"a"});
  Trainer t(m);
  t.end_epoch();
  t.end_epoch();
  EXPECT_EQ(t.epoch(), 2u);
  EXPECT_DOUBLE_EQ(t.generator_optimizer().lr(), c.lr_g * c.lr_decay * c.lr_decay);
  EXPECT_DOUBLE_EQ(t.discriminator_optimizer().lr(), c.lr_d * c.lr_decay * c.lr_decay);
}

// ---------------------------------------------------------------------------
// Conversion

TEST(Convert, LengthDeterminismAndNoPosterior) {
  const TrainConfig c = tiny_config();
  VoiceConversionModel m(c, {"a", "b"});
  Waveform src = testkit::voiced(24000, 24000);
  const auto calls = m.posterior().calls();
  Waveform y = convert(m, src, "b", kDefaultNoiseScale, 1);
  EXPECT_EQ(m.posterior().calls(), calls);
  EXPECT_EQ(y.size(), c.features.frames_for(src.size()) * c.features.frame_hop);
  EXPECT_EQ(y.sample_rate, 24000);
  EXPECT_EQ(convert(m, src, "b", kDefaultNoiseScale, 1).samples, y.samples);
  EXPECT_NE(convert(m, src, "b", kDefaultNoiseScale, 2).samples, y.samples);
  EXPECT_EQ(convert(m, src, "b", 0.0, 1).samples, convert(m, src, "b", 0.0, 2).samples);
  EXPECT_NE(convert(m, src, "a", 0.0, 1).samples, convert(m, src, "b", 0.0, 1).samples);
  EXPECT_THROW(convert(m, src, "zed", 0.5), ConfigError);
  EXPECT_THROW(convert(m, src, "a", 1.5), std::invalid_argument);
  Waveform low = convert(m, testkit::voiced(16000, 16000), "a", 0.0);
  EXPECT_EQ(low.size(), c.features.frames_for(24000) * c.features.frame_hop);
}

// ---------------------------------------------------------------------------
// Checkpoints

TEST(Checkpoint, RoundTripReproducesConversion) {
  const auto dir = scratch("ckpt");
  const TrainConfig c = tiny_config();
  VoiceConversionModel m(c, {"a", "b"});
  Trainer t(m);
  const std::vector<Utterance> batch{utterance(c, 3000)};
  t.train_step(batch);
  Waveform src = testkit::voiced(6000, 24000);
  const Waveform before = convert(m, src, "b", kDefaultNoiseScale, 7);
  save_checkpoint(dir / "m.vcc", m, &t);
  EXPECT_FALSE(std::filesystem::exists(dir / "m.vcc.tmp"));
  auto loaded = load_model(dir / "m.vcc");
  EXPECT_EQ(loaded->speakers(), m.speakers());
  EXPECT_EQ(to_string(loaded->config()), to_string(c));
  EXPECT_EQ(convert(*loaded, src, "b", kDefaultNoiseScale, 7).samples, before.samples);
}

TEST(Checkpoint, ResumedTrainingMatchesUninterrupted) {
  const auto dir = scratch("resume");
  const TrainConfig c = tiny_config();
  const std::vector<Utterance> batch{utterance(c, 3000)};
  VoiceConversionModel a(c, {"a"});
  Trainer ta(a);
  ta.train_step(batch);
  save_checkpoint(dir / "s1.vcc", a, &ta);
  const LossReport expected = ta.train_step(batch);

  auto b = load_model(dir / "s1.vcc");
  Trainer tb(*b);
  restore_trainer(dir / "s1.vcc", tb);
  EXPECT_EQ(tb.step(), 1u);
  EXPECT_TRUE(same(tb.train_step(batch), expected));
}

TEST(Checkpoint, ErrorsAreTyped) {
  const auto dir = scratch("ckpt_err");
  const TrainConfig c = tiny_config();
  VoiceConversionModel m(c, {"a"});
  EXPECT_THROW(load_model(dir / "missing.vcc"), MissingFileError);
  std::ofstream(dir / "junk.vcc") << "this is not a checkpoint";
  EXPECT_THROW(load_model(dir / "junk.vcc"), UnsupportedFormatError);
  save_checkpoint(dir / "m.vcc", m);
  Trainer t(m);
  EXPECT_THROW(restore_trainer(dir / "m.vcc", t), DataError);
  std::filesystem::resize_file(dir / "m.vcc", std::filesystem::file_size(dir / "m.vcc") / 2);
  EXPECT_THROW(load_model(dir / "m.vcc"), TruncatedFileError);
  std::string bytes;
  {
    save_checkpoint(dir / "v.vcc", m);
    std::ifstream in(dir / "v.vcc", std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  bytes[8] = 9;  // version field
  std::ofstream(dir / "v.vcc", std::ios::binary) << bytes;
  EXPECT_THROW(load_model(dir / "v.vcc"), UnsupportedFormatError);
}

// ---------------------------------------------------------------------------
// Manifest, logging and the training driver

TEST(Manifest, ParsesRecordsAndRejectsMalformedLines) {
  auto recs = parse_manifest("# header\n\nwav/a.wav|spk2\n/abs/b.wav|spk1|feat/b.ppg\n", "/data");
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0].audio, std::filesystem::path("/data/wav/a.wav"));
  EXPECT_FALSE(recs[0].ppg);
  EXPECT_EQ(recs[1].audio, std::filesystem::path("/abs/b.wav"));
  EXPECT_EQ(*recs[1].ppg, std::filesystem::path("/data/feat/b.ppg"));
  EXPECT_EQ(manifest_speakers(recs), (std::vector<std::string>{"spk2", "spk1"}));
  EXPECT_THROW(parse_manifest("only_a_path\n", "/"), DataError);
  EXPECT_THROW(parse_manifest("# nothing\n", "/"), DataError);
}

TEST(LogLine, IsJsonWithEveryTerm) {
  auto j = nlohmann::json::parse(log_line({0.1, 0.2, 0.3, 0.4, 0.5, 1.3}, 7, 2, 1.5));
  for (const char* k : {"step", "epoch", "wall_time", "kl", "adv_d", "adv_g", "fm", "recon", "total"})
    EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_EQ(j["step"], 7);
  EXPECT_DOUBLE_EQ(j["recon"].get<double>(), 0.5);
}

TEST(Train, WritesLogAndCheckpointAndResumes) {
  const auto dir = scratch("train");
  TrainConfig c = tiny_config();
  c.total_steps = 3;
  c.checkpoint_every = 2;
  save_wav(dir / "a.wav", testkit::voiced(3000, 24000));
  save_wav(dir / "b.wav", testkit::voiced(3200, 24000, 190.0));
  std::ofstream(dir / "train.txt") << "a.wav|x\nb.wav|y\n";
  auto recs = read_manifest(dir / "train.txt");
  auto r = train(c, recs, dir / "out");
  EXPECT_EQ(r.steps, 3u);
  EXPECT_TRUE(std::filesystem::exists(dir / "out" / "model.vcc"));
  EXPECT_TRUE(std::filesystem::exists(dir / "out" / "step_2.vcc"));
  std::ifstream log(dir / "out" / "train_log.jsonl");
  std::size_t lines = 0;
  for (std::string line; std::getline(log, line); ++lines) EXPECT_NO_THROW(nlohmann::json::parse(line));
  EXPECT_EQ(lines, 3u);

  c.total_steps = 4;
  auto resumed = train(c, recs, dir / "out2", dir / "out" / "step_2.vcc");
  EXPECT_EQ(resumed.steps, 4u);
  TrainConfig other = c;
  other.seed = 99;
  EXPECT_THROW(train(other, recs, dir / "out3", dir / "out" / "step_2.vcc"), ConfigError);
}
