// vcctl: train, convert, post-process and score.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
// 3 numerical divergence during training.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vc/checkpoint.hpp"
#include "vc/config.hpp"
#include "vc/error.hpp"
#include "vc/evaluation.hpp"
#include "vc/pipeline.hpp"
#include "vc/postprocess.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<fs::path> wav_files(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".wav") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

vc::SilenceBank bank_at_rate(const vc::SilenceBank& bank, int rate) {
  if (bank.sample_rate() == rate) return bank;
  vc::SilenceBank out;
  for (const auto& c : bank.clips) out.clips.push_back(vc::resample(c, rate));
  return out;
}

struct TrainArgs {
  std::string config, manifest, outdir, resume;
};

int run_train(const TrainArgs& a) {
  const vc::TrainConfig cfg = vc::load_config(a.config);
  const auto records = vc::read_manifest(a.manifest);
  const auto result = vc::train(cfg, records, a.outdir, a.resume);
  std::cout << "trained " << result.steps << " steps; checkpoint " << result.checkpoint.string() << "\n";
  return 0;
}

struct ConvertArgs {
  std::string ckpt, source, speaker, out, ppg;
  double noise_scale = vc::kDefaultNoiseScale;
  std::uint64_t seed = 0;
};

int run_convert(const ConvertArgs& a) {
  const auto model = vc::load_model(a.ckpt);
  const vc::Waveform source = vc::load_wav(a.source);
  std::optional<vc::LinguisticEmbedding> ppg;
  if (!a.ppg.empty()) ppg = vc::read_ppg(a.ppg);
  const vc::Waveform out = vc::convert(*model, source, a.speaker, a.noise_scale, a.seed, ppg ? &*ppg : nullptr);
  vc::save_wav(a.out, out);
  return 0;
}

struct PostArgs {
  std::string mode, in, out, bank, report;
  double snr_db = 40.0;
  double crossfade_ms = vc::kDefaultCrossfadeMs;
  vc::VadOptions vad;
  std::uint64_t seed = 0;
};

json process_file(const PostArgs& a, const vc::SilenceBank& bank_in, const fs::path& src, const fs::path& dst,
                  std::uint64_t index) {
  const vc::Waveform w = vc::load_wav(src);
  const vc::SilenceBank bank = bank_at_rate(bank_in, w.sample_rate);
  std::seed_seq seq{a.seed, index};
  vc::Rng rng(seq);
  json rec = {{"file", src.string()}, {"mode", a.mode}};
  vc::Waveform out;
  if (a.mode == "replace") {
    const auto segments = vc::detect_silence(w, a.vad);
    std::vector<vc::Crop> crops;
    out = vc::replace_silence(w, segments, bank, a.crossfade_ms, rng, &crops);
    json jc = json::array();
    bool tiled = false;
    for (const auto& c : crops) {
      jc.push_back({{"start", c.segment.start}, {"end", c.segment.end}, {"clip", c.clip},
                    {"offset", c.offset}, {"tiled", c.tiled}});
      tiled = tiled || c.tiled;
    }
    rec["segments_replaced"] = crops.size();
    rec["crops"] = jc;
    if (tiled) rec["warning"] = "bank clip shorter than segment; clip was tiled";
  } else {
    const vc::Waveform noise = vc::build_noise_track(bank, w.size(), rng);
    vc::NoiseReport report;
    out = vc::add_global_noise(w, noise, a.snr_db, &report);
    rec["snr_db_requested"] = a.snr_db;
    rec["snr_db"] = report.snr_db;
    rec["alpha"] = report.alpha;
    rec["clip_fraction"] = report.clip_fraction;
  }
  vc::save_wav(dst, out);
  rec["out"] = dst.string();
  return rec;
}

int run_postprocess(const PostArgs& a) {
  if (a.mode != "replace" && a.mode != "noise") throw vc::ConfigError("--mode must be replace or noise");
  const vc::SilenceBank bank = vc::load_bank(a.bank);
  std::vector<std::pair<fs::path, fs::path>> jobs;
  fs::path report = a.report;
  if (fs::is_directory(a.in)) {
    fs::create_directories(a.out);
    for (const auto& f : wav_files(a.in)) jobs.emplace_back(f, fs::path(a.out) / f.filename());
    if (report.empty()) report = fs::path(a.out) / "postprocess_report.jsonl";
  } else {
    if (!fs::exists(a.in)) throw vc::MissingFileError("input not found: " + a.in);
    jobs.emplace_back(a.in, a.out);
    if (report.empty()) report = fs::path(a.out).replace_extension(".report.jsonl");
  }
  std::ofstream log(report);
  if (!log) throw vc::DataError("cannot write report " + report.string());
  for (std::size_t i = 0; i < jobs.size(); ++i)
    log << process_file(a, bank, jobs[i].first, jobs[i].second, i).dump() << '\n';
  return 0;
}

struct BankArgs {
  std::string in, out;
  vc::VadOptions vad;
};

int run_bank(const BankArgs& a) {
  if (!fs::is_directory(a.in)) throw vc::MissingFileError("not a directory: " + a.in);
  std::vector<vc::Waveform> recordings;
  for (const auto& f : wav_files(a.in)) recordings.push_back(vc::load_wav(f));
  const vc::SilenceBank bank = vc::harvest_silence(recordings, a.vad);
  if (bank.empty()) throw vc::DataError("no silence of at least 100 ms found under " + a.in);
  fs::create_directories(a.out);
  for (std::size_t i = 0; i < bank.clips.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "silence_%05zu.wav", i);
    vc::save_wav(fs::path(a.out) / name, bank.clips[i]);
  }
  std::cout << "harvested " << bank.clips.size() << " clips\n";
  return 0;
}

struct EvalArgs {
  std::string trials, scores, detector, out_scores;
};

int run_eval(const EvalArgs& a) {
  const auto trials = vc::read_trials(a.trials);
  std::vector<vc::ScoreRecord> scores;
  if (!a.scores.empty()) {
    scores = vc::read_scores(a.scores);
  } else {
    if (a.detector != "silence") throw vc::ConfigError("--detector must be 'silence' (or pass --scores)");
    const fs::path base = fs::path(a.trials).parent_path();
    for (const auto& t : trials) {
      fs::path p = t.path;
      if (!fs::exists(p) && p.is_relative()) p = base / p;
      scores.push_back({t.path, vc::silence_baseline_score(vc::load_wav(p))});
    }
    if (!a.out_scores.empty()) vc::write_scores(a.out_scores, scores);
  }
  vc::EerResult r;
  try {
    r = vc::compute_eer(scores, trials);
  } catch (const std::invalid_argument& e) {
    throw vc::DataError(e.what());
  }
  std::cout << "EER " << r.eer * 100.0 << "% threshold " << r.threshold << "\n";
  return 0;
}

void add_vad(CLI::App* cmd, vc::VadOptions& vad) {
  cmd->add_option("--vad-threshold-db", vad.threshold_db, "Energy VAD threshold (dBFS)");
  cmd->add_option("--vad-frame-ms", vad.frame_ms, "VAD frame length");
  cmd->add_option("--vad-hop-ms", vad.hop_ms, "VAD hop");
  cmd->add_option("--min-silence-ms", vad.min_silence_ms, "Shortest silence kept");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PPG-based voice conversion toolkit"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a manifest");
  train_cmd->add_option("--config", train.config, "key = value config file")->required();
  train_cmd->add_option("--manifest", train.manifest, "audio_path|speaker_id[|ppg_path] lines")->required();
  train_cmd->add_option("--outdir", train.outdir, "Log and checkpoint directory")->required();
  train_cmd->add_option("--resume", train.resume, "Checkpoint to continue from");

  ConvertArgs conv;
  auto* conv_cmd = app.add_subcommand("convert", "Convert a source utterance to a target speaker");
  conv_cmd->add_option("--ckpt", conv.ckpt)->required();
  conv_cmd->add_option("--source", conv.source)->required();
  conv_cmd->add_option("--speaker", conv.speaker)->required();
  conv_cmd->add_option("--noise-scale", conv.noise_scale, "Prior sampling temperature in [0, 1]")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  conv_cmd->add_option("--out", conv.out)->required();
  conv_cmd->add_option("--ppg", conv.ppg, "Precomputed linguistic features (.ppg)");
  conv_cmd->add_option("--seed", conv.seed)->capture_default_str();

  PostArgs post;
  auto* post_cmd = app.add_subcommand("postprocess", "Silence replacement or global noise");
  post_cmd->add_option("--mode", post.mode)->required()->check(CLI::IsMember({"replace", "noise"}));
  post_cmd->add_option("--in", post.in, "WAV file or directory")->required();
  post_cmd->add_option("--out", post.out, "WAV file or directory")->required();
  post_cmd->add_option("--bank", post.bank, "Directory of real-silence WAVs")->required();
  post_cmd->add_option("--snr-db", post.snr_db)->capture_default_str();
  post_cmd->add_option("--crossfade-ms", post.crossfade_ms)->capture_default_str();
  post_cmd->add_option("--seed", post.seed)->capture_default_str();
  post_cmd->add_option("--report", post.report, "JSON-lines sidecar (default next to --out)");
  add_vad(post_cmd, post.vad);

  BankArgs bank;
  auto* bank_cmd = app.add_subcommand("bank", "Harvest real silence from genuine recordings");
  bank_cmd->add_option("--in", bank.in)->required();
  bank_cmd->add_option("--out", bank.out)->required();
  add_vad(bank_cmd, bank.vad);

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "EER of a score list, or score with the silence detector");
  eval_cmd->add_option("--trials", eval.trials)->required();
  auto* scores_opt = eval_cmd->add_option("--scores", eval.scores);
  auto* detector_opt = eval_cmd->add_option("--detector", eval.detector)->check(CLI::IsMember({"silence"}));
  eval_cmd->add_option("--out-scores", eval.out_scores)->needs(detector_opt);
  scores_opt->excludes(detector_opt);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  if (eval_cmd->parsed() && eval.scores.empty() && eval.detector.empty()) {
    std::cerr << "eval: pass --scores or --detector\n";
    return 1;
  }

  try {
    if (train_cmd->parsed()) return run_train(train);
    if (conv_cmd->parsed()) return run_convert(conv);
    if (post_cmd->parsed()) return run_postprocess(post);
    if (bank_cmd->parsed()) return run_bank(bank);
    return run_eval(eval);
  } catch (const vc::NumericalDivergence& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const vc::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
