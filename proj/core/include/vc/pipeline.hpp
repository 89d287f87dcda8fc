#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vc/losses.hpp"
#include "vc/model.hpp"
#include "vc/optim.hpp"

namespace vc {

inline constexpr double kDefaultNoiseScale = 0.667;

// One training item with its features computed once up front. The waveform
// is cropped to a whole number of frames so frames * hop == length.
struct Utterance {
  Waveform wave;
  std::size_t speaker = 0;
  LinearSpectrogram linear;
  MelSpectrogram mel;
  std::optional<LinguisticEmbedding> ppg;

  std::size_t frames() const { return mel.frames; }
};

// Resamples to cfg.sample_rate when needed, crops to whole frames and
// extracts spectrograms. Throws DataError when less than one frame remains.
Utterance prepare_utterance(Waveform w, std::size_t speaker, const FeatureConfig& cfg,
                            std::optional<LinguisticEmbedding> ppg = std::nullopt);

struct TrainingSegment {
  LatentSequence latent;   // [1, d_z, segment_frames]
  Tensor wave;             // [1, 1, segment_frames * hop]
  std::size_t start_frame = 0;
};

// Picks start_frame uniformly from [0, frames - segment_frames] and cuts the
// aligned latent and waveform windows. `wave` is [1, 1, frames * hop].
TrainingSegment slice_segments(const LatentSequence& z, const Tensor& wave, std::size_t segment_frames,
                               std::size_t hop, Rng& rng);

// Alternating discriminator / generator updates on one model.
class Trainer {
 public:
  explicit Trainer(VoiceConversionModel& model);

  // One discriminator update followed by one generator update. Losses are
  // averaged over the batch. Throws NumericalDivergence naming the first
  // non-finite term; the generator is not updated in that case.
  LossReport train_step(std::span<const Utterance> batch);

  // A single discriminator update on explicit real / fake waveforms [1, 1, T];
  // returns adv_d before the update.
  double discriminator_step(const Tensor& real, const Tensor& fake);

  // Applies the per-epoch learning-rate decay to both optimizers.
  void end_epoch();

  std::size_t step() const { return step_; }
  std::size_t epoch() const { return epoch_; }
  VoiceConversionModel& model() { return model_; }
  Adam& generator_optimizer() { return gen_opt_; }
  Adam& discriminator_optimizer() { return disc_opt_; }
  Rng& rng() { return rng_; }
  const Adam& generator_optimizer() const { return gen_opt_; }
  const Adam& discriminator_optimizer() const { return disc_opt_; }
  const Rng& rng() const { return rng_; }
  void restore_counters(std::size_t step, std::size_t epoch) {
    step_ = step;
    epoch_ = epoch;
  }

 private:
  VoiceConversionModel& model_;
  Adam gen_opt_;
  Adam disc_opt_;
  Rng rng_;
  std::size_t step_ = 0;
  std::size_t epoch_ = 0;
};

// Inference path: mel -> linguistic features -> prior with the target speaker
// -> reparameterize(q, noise_scale) -> decoder. The posterior encoder is not
// touched. Output has frames * hop samples at the model rate.
Waveform convert(const VoiceConversionModel& model, const Waveform& source, const std::string& target_speaker,
                 double noise_scale, std::uint64_t seed = 0, const LinguisticEmbedding* ppg = nullptr);

// Manifest lines: audio_path|speaker_id[|ppg_path]. Relative paths resolve
// against `base`. Blank lines and lines starting with '#' are skipped.
struct ManifestRecord {
  std::filesystem::path audio;
  std::string speaker;
  std::optional<std::filesystem::path> ppg;
};
std::vector<ManifestRecord> parse_manifest(const std::string& text, const std::filesystem::path& base);
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);

// Speaker names in order of first appearance.
std::vector<std::string> manifest_speakers(const std::vector<ManifestRecord>& records);

std::string log_line(const LossReport& report, std::size_t step, std::size_t epoch, double wall_seconds);

struct TrainResult {
  std::size_t steps = 0;
  LossReport last;
  std::filesystem::path checkpoint;
};

// Full training run: loads the manifest data, trains cfg.total_steps steps,
// appends one JSON line per logged step to outdir/train_log.jsonl and writes
// checkpoints into outdir (final one: outdir/model.vcc). `resume` continues
// from a checkpoint written by a previous run; its config must match cfg except
// for total_steps, log_every and checkpoint_every.
TrainResult train(const TrainConfig& cfg, const std::vector<ManifestRecord>& records,
                  const std::filesystem::path& outdir, const std::filesystem::path& resume = {});

}  // namespace vc
