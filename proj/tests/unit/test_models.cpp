#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "support/testing.hpp"
#include "vc/config.hpp"
#include "vc/discriminators.hpp"
#include "vc/encoders.hpp"
#include "vc/error.hpp"
#include "vc/generator.hpp"

using namespace vc;
using vc::testkit::random_tensor;

namespace {

const TrainConfig& desk() {
  static const TrainConfig cfg = TrainConfig::desk();
  return cfg;
}

SpeakerEmbedding speaker(std::size_t dim, std::mt19937_64& rng) { return {random_tensor({1, dim, 1}, rng, 1.0, false), 0}; }

}  // namespace

TEST(Decoder, OutputLengthIsFramesTimesHop) {
  Rng init(1);
  Decoder dec(desk().decoder_config(), init);
  std::mt19937_64 rng(2);
  auto s = speaker(desk().d_s, rng);
  for (std::size_t F : {1u, 2u, 5u, 13u}) {
    Tensor y = dec.forward(random_tensor({1, desk().d_z, F}, rng, 1.0, false), s);
    EXPECT_EQ(y.shape(), (Shape{1, 1, F * desk().decoder_config().hop()}));
    for (double v : y.values()) EXPECT_LT(std::abs(v), 1.0);
  }
}

TEST(Decoder, StagesAreNearestUpsamplingWithOddKernels) {
  Rng init(1);
  Decoder dec(desk().decoder_config(), init);
  const auto stages = dec.upsample_stages();
  ASSERT_EQ(stages.size(), desk().upsample_factors.size());
  for (std::size_t i = 0; i < stages.size(); ++i) {
    EXPECT_TRUE(stages[i].nearest_interpolation);
    EXPECT_FALSE(stages[i].transposed_convolution);
    EXPECT_EQ(stages[i].factor, desk().upsample_factors[i]);
    EXPECT_EQ(stages[i].conv_kernel, 2 * stages[i].factor + 1);
    EXPECT_EQ(stages[i].out_channels, desk().decoder_channels >> (i + 1));
  }
}

TEST(Decoder, RejectsMismatchedInputs) {
  Rng init(1);
  Decoder dec(desk().decoder_config(), init);
  std::mt19937_64 rng(2);
  EXPECT_THROW(dec.forward(random_tensor({1, desk().d_z + 1, 3}, rng), speaker(desk().d_s, rng)), std::invalid_argument);
  EXPECT_THROW(dec.forward(random_tensor({1, desk().d_z, 3}, rng), speaker(desk().d_s + 1, rng)), std::invalid_argument);
}

TEST(Reparameterize, ZeroNoiseReturnsMeanAndSeedIsDeterministic) {
  std::mt19937_64 rng(3);
  GaussianSequence p{random_tensor({1, 4, 6}, rng), random_tensor({1, 4, 6}, rng)};
  auto z0 = reparameterize(p, 0.0, std::uint64_t{9});
  for (std::size_t i = 0; i < z0.values.size(); ++i) EXPECT_EQ(z0.values.values()[i], p.mean.values()[i]);
  auto a = reparameterize(p, 0.7, std::uint64_t{9}), b = reparameterize(p, 0.7, std::uint64_t{9});
  EXPECT_TRUE(std::equal(a.values.values().begin(), a.values.values().end(), b.values.values().begin()));
  EXPECT_THROW(reparameterize(p, 1.5, std::uint64_t{1}), std::invalid_argument);
  EXPECT_THROW(reparameterize(p, -0.1, std::uint64_t{1}), std::invalid_argument);
}

TEST(Reparameterize, SampleMomentsMatchDistribution) {
  GaussianSequence p{Tensor::full({1, 1, 200000}, 1.5), Tensor::full({1, 1, 200000}, std::log(0.25))};
  auto z = reparameterize(p, 1.0, std::uint64_t{4});
  double m = 0, v = 0;
  for (double x : z.values.values()) m += x / 200000;
  for (double x : z.values.values()) v += (x - m) * (x - m) / 200000;
  EXPECT_NEAR(m, 1.5, 0.01);
  EXPECT_NEAR(v, 0.25, 0.01);
}

TEST(Reparameterize, GradientsFlowToMeanAndLogvar) {
  std::mt19937_64 rng(5);
  GaussianSequence p{random_tensor({1, 3, 4}, rng), random_tensor({1, 3, 4}, rng, 0.5)};
  auto loss = [&] {
    Tensor z = reparameterize(p, 1.0, std::uint64_t{77}).values;
    return ops::sum(ops::mul(z, z));
  };
  EXPECT_LT(testkit::gradcheck(loss, {p.mean, p.logvar}).max_rel, 1e-6);
}

TEST(Prior, FramesMatchLinguisticInput) {
  Rng init(1);
  PriorEncoder prior(desk().prior_config(), init);
  std::mt19937_64 rng(6);
  auto s = speaker(desk().d_s, rng);
  for (std::size_t F : {1u, 7u, 40u}) {
    auto q = prior.encode({random_tensor({1, desk().d_g, F}, rng)}, s);
    EXPECT_EQ(q.mean.shape(), (Shape{1, desk().d_z, F}));
    EXPECT_EQ(q.logvar.shape(), (Shape{1, desk().d_z, F}));
    for (double v : q.logvar.values()) {
      EXPECT_GE(v, kLogvarMin);
      EXPECT_LE(v, kLogvarMax);
    }
  }
  EXPECT_THROW(prior.encode({random_tensor({1, desk().d_g + 1, 3}, rng)}, s), std::invalid_argument);
}

TEST(Prior, DependsOnSpeaker) {
  Rng init(1);
  PriorEncoder prior(desk().prior_config(), init);
  std::mt19937_64 rng(7);
  LinguisticEmbedding g{random_tensor({1, desk().d_g, 5}, rng)};
  auto a = prior.encode(g, speaker(desk().d_s, rng)), b = prior.encode(g, speaker(desk().d_s, rng));
  double diff = 0.0;
  for (std::size_t i = 0; i < a.mean.size(); ++i) diff += std::abs(a.mean.values()[i] - b.mean.values()[i]);
  EXPECT_GT(diff, 0.0);
}

TEST(Posterior, FramesMatchAndReceptiveFieldIsLocal) {
  Rng init(1);
  PosteriorEncoder post(desk().posterior_config(), init);
  std::mt19937_64 rng(8);
  auto s = speaker(desk().d_s, rng);
  const std::size_t bins = desk().features.fft_bins(), F = 30, j = 15;
  Tensor x = random_tensor({1, bins, F}, rng, 1.0, false);
  auto p = post.encode(x, s);
  EXPECT_EQ(p.mean.shape(), (Shape{1, desk().d_z, F}));
  std::vector<double> vals(x.values().begin(), x.values().end());
  for (std::size_t c = 0; c < bins; ++c) vals[c * F + j] += 1.0;
  auto p2 = post.encode(Tensor::from(x.shape(), vals), s);
  const std::size_t r = post.receptive_radius();
  ASSERT_LT(r, j);
  for (std::size_t t = 0; t < F; ++t) {
    double d = 0.0;
    for (std::size_t c = 0; c < desk().d_z; ++c) d += std::abs(p.mean.at(0, c, t) - p2.mean.at(0, c, t));
    if (t + r < j || t > j + r) {
      EXPECT_EQ(d, 0.0) << "frame " << t;
    }
  }
  const auto before = post.calls();
  post.encode(x, s);
  EXPECT_EQ(post.calls(), before + 1);
}

TEST(Conformer, OutputFramesFollowSubsampling) {
  std::mt19937_64 rng(9);
  for (std::size_t sub : {1u, 2u, 3u}) {
    ConformerConfig c = desk().conformer_config();
    c.subsample = sub;
    Rng init(1);
    ConformerEncoder enc(c, init);
    for (std::size_t F : {4u, 9u, 16u}) {
      Tensor y = enc.forward(random_tensor({1, c.n_mels, F}, rng, 1.0, false));
      EXPECT_EQ(y.shape(), (Shape{1, c.d_model, (F + sub - 1) / sub}));
    }
  }
}

TEST(SpeakerTable, LookupReturnsDistinctRowsAndRejectsUnknown) {
  Rng init(1);
  SpeakerTable table(3, 8, init);
  auto a = table.lookup(0), b = table.lookup(2);
  EXPECT_EQ(a.values.shape(), (Shape{1, 8, 1}));
  EXPECT_EQ(b.speaker_id, 2u);
  EXPECT_FALSE(std::equal(a.values.values().begin(), a.values.values().end(), b.values.values().begin()));
  EXPECT_THROW(table.lookup(3), std::out_of_range);
}

TEST(Ppg, RoundTripsAtFloatPrecision) {
  std::mt19937_64 rng(10);
  LinguisticEmbedding g{random_tensor({1, 5, 11}, rng, 1.0, false)};
  const auto path = std::filesystem::temp_directory_path() / "vc_test.ppg";
  write_ppg(path, g);
  auto back = read_ppg(path);
  EXPECT_EQ(back.values.shape(), g.values.shape());
  for (std::size_t i = 0; i < g.values.size(); ++i)
    EXPECT_EQ(back.values.values()[i], static_cast<double>(static_cast<float>(g.values.values()[i])));
  std::filesystem::resize_file(path, 20);
  EXPECT_THROW(read_ppg(path), TruncatedFileError);
  std::filesystem::remove(path);
  EXPECT_THROW(read_ppg(path), MissingFileError);
}

TEST(Discriminators, OneScorePerSubDiscriminator) {
  Rng init(1);
  Discriminators d(desk().discriminator_config(), init);
  std::mt19937_64 rng(11);
  for (std::size_t len : {1024u, 1031u}) {
    auto out = d.discriminate(random_tensor({1, 1, len}, rng, 0.1, false));
    ASSERT_EQ(out.count(), desk().mpd_periods.size() + desk().msd_scales);
    ASSERT_EQ(d.count(), out.count());
    for (std::size_t i = 0; i < out.count(); ++i) {
      EXPECT_EQ(out.feature_maps[i].back().node(), out.scores[i].node());
      EXPECT_GE(out.feature_maps[i].size(), 2u);
    }
    for (std::size_t i = 0; i < desk().mpd_periods.size(); ++i) EXPECT_EQ(out.scores[i].shape().n, desk().mpd_periods[i]);
  }
  EXPECT_THROW(d.discriminate(random_tensor({1, 1, d.config().min_length() - 1}, rng)), std::invalid_argument);
}

TEST(Discriminators, FoldedLayoutCoversSignal) {
  for (std::size_t len = 1; len < 60; ++len)
    for (std::size_t p : {2u, 3u, 5u, 7u, 11u}) {
      auto l = folded_layout(len, p);
      EXPECT_EQ(l.rows, p);
      EXPECT_EQ(l.rows * l.columns, len + l.padding);
      EXPECT_LT(l.padding, p);
    }
}

TEST(BroadcastTime, RepeatsSpeakerVector) {
  Tensor s = Tensor::from({1, 2, 1}, {1.0, -2.0});
  Tensor b = broadcast_time(s, 3);
  EXPECT_EQ(std::vector<double>(b.values().begin(), b.values().end()), (std::vector<double>{1, 1, 1, -2, -2, -2}));
}
