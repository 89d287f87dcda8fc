#include "vc/model.hpp"

#include <algorithm>

#include "vc/error.hpp"

namespace vc {

VoiceConversionModel::VoiceConversionModel(const TrainConfig& cfg, std::vector<std::string> speakers)
    : cfg_(cfg), speakers_(std::move(speakers)) {
  cfg_.validate();
  if (speakers_.empty()) throw ConfigError("model needs at least one speaker");
  for (std::size_t i = 0; i < speakers_.size(); ++i)
    if (std::find(speakers_.begin() + i + 1, speakers_.end(), speakers_[i]) != speakers_.end())
      throw ConfigError("duplicate speaker '" + speakers_[i] + "'");
  if (cfg_.n_speakers != 0 && cfg_.n_speakers < speakers_.size())
    throw ConfigError("n_speakers = " + std::to_string(cfg_.n_speakers) + " but the data has " +
                      std::to_string(speakers_.size()) + " speakers");
  Rng rng(cfg_.seed);
  if (cfg_.linguistic_source == LinguisticSource::conformer)
    conformer_ = std::make_unique<ConformerEncoder>(cfg_.conformer_config(), rng);
  table_ = SpeakerTable(std::max(cfg_.n_speakers, speakers_.size()), cfg_.d_s, rng);
  prior_ = std::make_unique<PriorEncoder>(cfg_.prior_config(), rng);
  posterior_ = std::make_unique<PosteriorEncoder>(cfg_.posterior_config(), rng);
  decoder_ = std::make_unique<Decoder>(cfg_.decoder_config(), rng);
  discriminators_ = std::make_unique<Discriminators>(cfg_.discriminator_config(), rng);
}

std::size_t VoiceConversionModel::speaker_index(const std::string& name) const {
  auto it = std::find(speakers_.begin(), speakers_.end(), name);
  if (it == speakers_.end()) throw ConfigError("unknown speaker '" + name + "'");
  return static_cast<std::size_t>(it - speakers_.begin());
}

LinguisticEmbedding VoiceConversionModel::linguistic(const MelSpectrogram& mel,
                                                     const LinguisticEmbedding* ppg) const {
  LinguisticEmbedding g;
  if (conformer_) {
    if (cfg_.freeze_linguistic) {
      NoGradGuard guard;
      g = conformer_->encode(mel);
    } else {
      g = conformer_->encode(mel);
    }
  } else {
    if (!ppg) throw DataError("model uses precomputed linguistic features but none were supplied");
    if (ppg->dim() != cfg_.d_g)
      throw DataError("precomputed features have dim " + std::to_string(ppg->dim()) + ", model expects " +
                      std::to_string(cfg_.d_g));
    g = *ppg;
  }
  if (g.frames() != mel.frames) g.values = ops::resample_time(g.values, mel.frames);
  return g;
}

ParamList VoiceConversionModel::generator_parameters() const {
  ParamList out;
  if (conformer_ && !cfg_.freeze_linguistic) conformer_->collect("linguistic", out);
  table_.collect("speakers", out);
  prior_->collect("prior", out);
  posterior_->collect("posterior", out);
  decoder_->collect("decoder", out);
  return out;
}

ParamList VoiceConversionModel::discriminator_parameters() const {
  ParamList out;
  discriminators_->collect("disc", out);
  return out;
}

ParamList VoiceConversionModel::parameters() const {
  ParamList out;
  if (conformer_) conformer_->collect("linguistic", out);
  table_.collect("speakers", out);
  prior_->collect("prior", out);
  posterior_->collect("posterior", out);
  decoder_->collect("decoder", out);
  discriminators_->collect("disc", out);
  return out;
}

}  // namespace vc
