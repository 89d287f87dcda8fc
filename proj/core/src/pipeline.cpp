#include "vc/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "vc/checkpoint.hpp"
#include "vc/error.hpp"

namespace vc {

namespace {

void require_finite(const char* term, double v) {
  if (!std::isfinite(v)) throw NumericalDivergence(term, v);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

Utterance prepare_utterance(Waveform w, std::size_t speaker, const FeatureConfig& cfg,
                            std::optional<LinguisticEmbedding> ppg) {
  if (w.samples.empty()) throw DataError("empty waveform");
  if (w.sample_rate != cfg.sample_rate) w = resample(w, cfg.sample_rate);
  const std::size_t frames = w.size() / cfg.frame_hop;
  if (frames * cfg.frame_hop < cfg.frame_length)
    throw DataError("utterance of " + std::to_string(w.size()) + " samples is shorter than one analysis frame");
  w.samples.resize(frames * cfg.frame_hop);
  Utterance u;
  u.linear = linear_spectrogram(w, cfg);
  u.mel = mel_spectrogram(u.linear, cfg);
  u.wave = std::move(w);
  u.speaker = speaker;
  u.ppg = std::move(ppg);
  return u;
}

TrainingSegment slice_segments(const LatentSequence& z, const Tensor& wave, std::size_t segment_frames,
                               std::size_t hop, Rng& rng) {
  const std::size_t frames = z.frames();
  if (segment_frames == 0) throw std::invalid_argument("segment_frames must be positive");
  if (wave.shape().t != frames * hop)
    throw std::invalid_argument("waveform length " + std::to_string(wave.shape().t) + " != frames (" +
                                std::to_string(frames) + ") x hop (" + std::to_string(hop) + ")");
  if (frames < segment_frames)
    throw DataError("utterance of " + std::to_string(frames) + " frames is shorter than one segment (" +
                    std::to_string(segment_frames) + ")");
  std::uniform_int_distribution<std::size_t> pick(0, frames - segment_frames);
  const std::size_t start = pick(rng);
  return {{ops::slice_time(z.values, start, segment_frames)},
          ops::slice_time(wave, start * hop, segment_frames * hop), start};
}

Trainer::Trainer(VoiceConversionModel& model)
    : model_(model),
      gen_opt_(model.generator_parameters(), model.config().generator_adam()),
      disc_opt_(model.discriminator_parameters(), model.config().discriminator_adam()),
      rng_(model.config().seed ^ 0x5eed5eed5eedULL) {}

double Trainer::discriminator_step(const Tensor& real, const Tensor& fake) {
  const Discriminators& d = model_.discriminators();
  disc_opt_.zero_grad();
  Tensor loss = adversarial_d_loss(d.discriminate(real.detach()), d.discriminate(fake.detach()));
  const double v = loss.item();
  require_finite("adv_d", v);
  loss.backward();
  disc_opt_.step();
  disc_opt_.zero_grad();
  return v;
}

LossReport Trainer::train_step(std::span<const Utterance> batch) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  const TrainConfig& cfg = model_.config();
  const std::size_t hop = cfg.features.frame_hop;
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  struct Item {
    TrainingSegment segment;
    Tensor generated;
    Tensor kl;
  };
  std::vector<Item> items;
  items.reserve(batch.size());
  for (const Utterance& u : batch) {
    const LinguisticEmbedding* ppg = u.ppg ? &*u.ppg : nullptr;
    LinguisticEmbedding g = model_.linguistic(u.mel, ppg);
    SpeakerEmbedding s = model_.speaker(u.speaker);
    GaussianSequence q = model_.prior().encode(g, s);
    GaussianSequence p = model_.posterior().encode(u.linear, s);
    LatentSequence z = reparameterize(p, 1.0, rng_);
    TrainingSegment seg = slice_segments(z, u.wave.to_tensor(), cfg.segment_frames, hop, rng_);
    Tensor generated = model_.decoder().forward(seg.latent.values, s);
    items.push_back({std::move(seg), std::move(generated), kl_divergence(p, q)});
  }

  const Discriminators& disc = model_.discriminators();
  LossReport report;

  disc_opt_.zero_grad();
  {
    Tensor total = Tensor::scalar(0.0);
    for (const Item& it : items)
      total = ops::add(total, adversarial_d_loss(disc.discriminate(it.segment.wave),
                                                 disc.discriminate(it.generated.detach())));
    total = ops::scale(total, inv_b);
    report.adv_d = total.item();
    require_finite("adv_d", report.adv_d);
    total.backward();
  }
  disc_opt_.step();

  gen_opt_.zero_grad();
  Tensor recon_t = Tensor::scalar(0.0), kl_t = Tensor::scalar(0.0), adv_t = Tensor::scalar(0.0),
         fm_t = Tensor::scalar(0.0);
  for (const Item& it : items) {
    DiscriminatorOutput fake = disc.discriminate(it.generated);
    DiscriminatorOutput real;
    {
      NoGradGuard guard;
      real = disc.discriminate(it.segment.wave);
    }
    recon_t = ops::add(recon_t, reconstruction_loss(it.generated, it.segment.wave, cfg.features));
    kl_t = ops::add(kl_t, it.kl);
    adv_t = ops::add(adv_t, adversarial_g_loss(fake));
    fm_t = ops::add(fm_t, feature_matching_loss(real, fake));
  }
  recon_t = ops::scale(recon_t, inv_b);
  kl_t = ops::scale(kl_t, inv_b);
  adv_t = ops::scale(adv_t, inv_b);
  fm_t = ops::scale(fm_t, inv_b);
  report.recon = recon_t.item();
  report.kl = kl_t.item();
  report.adv_g = adv_t.item();
  report.fm = fm_t.item();
  require_finite("recon", report.recon);
  require_finite("kl", report.kl);
  require_finite("adv_g", report.adv_g);
  require_finite("fm", report.fm);
  Tensor total = total_generator_loss(recon_t, kl_t, adv_t, fm_t, cfg.weights);
  report = total_generator_loss(report, cfg.weights);
  require_finite("total", report.total);
  total.backward();
  gen_opt_.step();
  gen_opt_.zero_grad();
  // The generator pass also deposited gradients on the discriminator.
  disc_opt_.zero_grad();
  ++step_;
  return report;
}

void Trainer::end_epoch() {
  const double decay = model_.config().lr_decay;
  gen_opt_.set_lr(gen_opt_.lr() * decay);
  disc_opt_.set_lr(disc_opt_.lr() * decay);
  ++epoch_;
}

Waveform convert(const VoiceConversionModel& model, const Waveform& source, const std::string& target_speaker,
                 double noise_scale, std::uint64_t seed, const LinguisticEmbedding* ppg) {
  const std::size_t target = model.speaker_index(target_speaker);
  validate(source);
  const FeatureConfig& fc = model.config().features;
  const Waveform& input = source.sample_rate == fc.sample_rate ? source : resample(source, fc.sample_rate);
  NoGradGuard guard;
  MelSpectrogram mel = mel_spectrogram(input, fc);
  LinguisticEmbedding g = model.linguistic(mel, ppg);
  SpeakerEmbedding s = model.speaker(target);
  GaussianSequence q = model.prior().encode(g, s);
  LatentSequence z = reparameterize(q, noise_scale, seed);
  return model.decoder().decode(z, s, fc.sample_rate);
}

std::vector<ManifestRecord> parse_manifest(const std::string& text, const std::filesystem::path& base) {
  std::vector<ManifestRecord> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
  };
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, '|')) fields.push_back(trim(field));
    if (fields.size() < 2 || fields.size() > 3 || fields[0].empty() || fields[1].empty())
      throw DataError("manifest line " + std::to_string(lineno) + ": expected audio_path|speaker_id[|ppg_path]");
    ManifestRecord r{resolve(fields[0]), fields[1], std::nullopt};
    if (fields.size() == 3 && !fields[2].empty()) r.ppg = resolve(fields[2]);
    out.push_back(std::move(r));
  }
  if (out.empty()) throw DataError("manifest has no records");
  return out;
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFileError("cannot open manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), path.parent_path());
}

std::vector<std::string> manifest_speakers(const std::vector<ManifestRecord>& records) {
  std::vector<std::string> names;
  for (const auto& r : records)
    if (std::find(names.begin(), names.end(), r.speaker) == names.end()) names.push_back(r.speaker);
  return names;
}

std::string log_line(const LossReport& report, std::size_t step, std::size_t epoch, double wall_seconds) {
  nlohmann::json j = {{"step", step},          {"epoch", epoch},       {"wall_time", wall_seconds},
                      {"kl", report.kl},       {"adv_d", report.adv_d}, {"adv_g", report.adv_g},
                      {"fm", report.fm},       {"recon", report.recon}, {"total", report.total}};
  return j.dump();
}

TrainResult train(const TrainConfig& cfg, const std::vector<ManifestRecord>& records,
                  const std::filesystem::path& outdir, const std::filesystem::path& resume) {
  cfg.validate();
  std::unique_ptr<VoiceConversionModel> model;
  if (!resume.empty()) {
    model = load_model(resume);
    // Run length and logging cadence may change between sessions.
    TrainConfig stored = model->config();
    stored.total_steps = cfg.total_steps;
    stored.log_every = cfg.log_every;
    stored.checkpoint_every = cfg.checkpoint_every;
    if (to_string(stored) != to_string(cfg))
      throw ConfigError("config differs from the one stored in " + resume.string());
  } else {
    model = std::make_unique<VoiceConversionModel>(cfg, manifest_speakers(records));
  }

  std::vector<Utterance> data;
  data.reserve(records.size());
  for (const auto& r : records) {
    std::optional<LinguisticEmbedding> ppg;
    if (r.ppg) ppg = read_ppg(*r.ppg);
    else if (cfg.linguistic_source == LinguisticSource::precomputed)
      throw DataError("manifest record " + r.audio.string() + " lacks the ppg path the config requires");
    Utterance u = prepare_utterance(load_wav(r.audio), model->speaker_index(r.speaker), cfg.features, std::move(ppg));
    if (u.frames() < cfg.segment_frames)
      throw DataError(r.audio.string() + " is shorter than one training segment");
    data.push_back(std::move(u));
  }

  Trainer trainer(*model);
  if (!resume.empty()) restore_trainer(resume, trainer);

  std::filesystem::create_directories(outdir);
  std::ofstream log(outdir / "train_log.jsonl", std::ios::app);
  if (!log) throw DataError("cannot write " + (outdir / "train_log.jsonl").string());

  const std::size_t per_epoch = (data.size() + cfg.batch_size - 1) / cfg.batch_size;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const auto started = std::chrono::steady_clock::now();
  TrainResult result;
  std::vector<Utterance> batch;
  while (trainer.step() < cfg.total_steps) {
    const std::size_t in_epoch = trainer.step() % per_epoch;
    if (in_epoch == 0) std::shuffle(order.begin(), order.end(), trainer.rng());
    batch.clear();
    for (std::size_t k = in_epoch * cfg.batch_size; k < std::min(data.size(), (in_epoch + 1) * cfg.batch_size); ++k)
      batch.push_back(data[order[k]]);
    result.last = trainer.train_step(batch);
    if (in_epoch + 1 == per_epoch) trainer.end_epoch();
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (cfg.log_every && trainer.step() % cfg.log_every == 0)
      log << log_line(result.last, trainer.step(), trainer.epoch(), wall) << '\n' << std::flush;
    if (cfg.checkpoint_every && trainer.step() % cfg.checkpoint_every == 0)
      save_checkpoint(outdir / ("step_" + std::to_string(trainer.step()) + ".vcc"), *model, &trainer);
  }
  result.steps = trainer.step();
  result.checkpoint = outdir / "model.vcc";
  save_checkpoint(result.checkpoint, *model, &trainer);
  return result;
}

}  // namespace vc
