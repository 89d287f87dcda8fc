#include <benchmark/benchmark.h>

#include <cmath>
#include <random>

#include "vc/audio.hpp"
#include "vc/config.hpp"
#include "vc/generator.hpp"
#include "vc/ops.hpp"
#include "vc/pipeline.hpp"

namespace {

using namespace vc;

Tensor randn(Shape s, std::mt19937_64& rng, bool grad = false) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> v(s.size());
  for (double& x : v) x = nd(rng);
  return Tensor::from(s, std::move(v), grad);
}

Waveform tone(std::size_t n, int sr) {
  Waveform w{std::vector<double>(n), sr};
  for (std::size_t i = 0; i < n; ++i) w.samples[i] = 0.3 * std::sin(2.0 * 3.141592653589793 * 220.0 * i / sr);
  return w;
}

// args: channels, kernel, time
void BM_Conv1dForwardBackward(benchmark::State& state) {
  std::mt19937_64 rng(1);
  const auto C = static_cast<std::size_t>(state.range(0)), K = static_cast<std::size_t>(state.range(1)),
             T = static_cast<std::size_t>(state.range(2));
  Tensor x = randn({1, C, T}, rng, true), w = randn({C, C, K}, rng, true), b = randn({1, C, 1}, rng, true);
  ops::ConvSpec spec{1, 1, (K - 1) / 2, K / 2, 1};
  for (auto _ : state) {
    Tensor y = ops::sum(ops::conv1d(x, w, b, spec));
    y.backward();
    benchmark::DoNotOptimize(w.grad().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(C * C * K * T));
}
BENCHMARK(BM_Conv1dForwardBackward)->Args({1, 3, 4096})->Args({32, 3, 1024})->Args({64, 7, 2048})->Args({32, 41, 512});

void BM_Attention(benchmark::State& state) {
  std::mt19937_64 rng(2);
  const auto T = static_cast<std::size_t>(state.range(0));
  Tensor q = randn({1, 32, T}, rng, true), k = randn({1, 32, T}, rng, true), v = randn({1, 32, T}, rng, true);
  for (auto _ : state) {
    Tensor y = ops::sum(ops::attention(q, k, v, 2));
    y.backward();
    benchmark::DoNotOptimize(q.grad().data());
  }
}
BENCHMARK(BM_Attention)->Arg(64)->Arg(256);

void BM_LogMel(benchmark::State& state) {
  const FeatureConfig cfg;
  const Tensor x = tone(static_cast<std::size_t>(state.range(0)), 24000).to_tensor();
  for (auto _ : state) benchmark::DoNotOptimize(log_mel(x, cfg).values().data());
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_LogMel)->Arg(24000)->Arg(96000);

void BM_DecoderForward(benchmark::State& state) {
  const TrainConfig cfg = TrainConfig::desk();
  Rng init(3);
  Decoder dec(cfg.decoder_config(), init);
  std::mt19937_64 rng(4);
  SpeakerEmbedding s{randn({1, cfg.d_s, 1}, rng), 0};
  Tensor z = randn({1, cfg.d_z, static_cast<std::size_t>(state.range(0))}, rng);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(dec.forward(z, s).values().data());
}
BENCHMARK(BM_DecoderForward)->Arg(16)->Arg(128);

void BM_TrainStepDesk(benchmark::State& state) {
  const TrainConfig cfg = TrainConfig::desk();
  VoiceConversionModel model(cfg, {"spk"});
  Trainer trainer(model);
  const std::vector<Utterance> batch{prepare_utterance(tone(24000, 24000), 0, cfg.features)};
  for (auto _ : state) benchmark::DoNotOptimize(trainer.train_step(batch).total);
}
BENCHMARK(BM_TrainStepDesk)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
