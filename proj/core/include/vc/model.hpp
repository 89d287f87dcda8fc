#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "vc/config.hpp"
#include "vc/discriminators.hpp"
#include "vc/encoders.hpp"
#include "vc/generator.hpp"

namespace vc {

// All networks of the converter plus the speaker name table. Parameters are
// initialized deterministically from cfg.seed.
class VoiceConversionModel {
 public:
  VoiceConversionModel(const TrainConfig& cfg, std::vector<std::string> speakers);
  VoiceConversionModel(const VoiceConversionModel&) = delete;
  VoiceConversionModel& operator=(const VoiceConversionModel&) = delete;

  const TrainConfig& config() const { return cfg_; }
  const std::vector<std::string>& speakers() const { return speakers_; }
  // Throws ConfigError for names not seen during training.
  std::size_t speaker_index(const std::string& name) const;

  // Linguistic features resampled to the mel frame rate. `ppg` is required
  // when the model was configured with precomputed features and ignored otherwise.
  LinguisticEmbedding linguistic(const MelSpectrogram& mel, const LinguisticEmbedding* ppg = nullptr) const;
  SpeakerEmbedding speaker(std::size_t index) const { return table_.lookup(index); }

  const ConformerEncoder* conformer() const { return conformer_.get(); }
  const SpeakerTable& speaker_table() const { return table_; }
  const PriorEncoder& prior() const { return *prior_; }
  const PosteriorEncoder& posterior() const { return *posterior_; }
  const Decoder& decoder() const { return *decoder_; }
  const Discriminators& discriminators() const { return *discriminators_; }

  // Everything updated by the generator optimizer; the linguistic encoder is
  // left out when cfg.freeze_linguistic is set.
  ParamList generator_parameters() const;
  ParamList discriminator_parameters() const;
  // Every tensor that a checkpoint has to carry.
  ParamList parameters() const;

 private:
  TrainConfig cfg_;
  std::vector<std::string> speakers_;
  std::unique_ptr<ConformerEncoder> conformer_;
  SpeakerTable table_;
  std::unique_ptr<PriorEncoder> prior_;
  std::unique_ptr<PosteriorEncoder> posterior_;
  std::unique_ptr<Decoder> decoder_;
  std::unique_ptr<Discriminators> discriminators_;
};

}  // namespace vc
