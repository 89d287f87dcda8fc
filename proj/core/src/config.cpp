#include "vc/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "vc/error.hpp"

namespace vc {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) parts.push_back(trim(cur));
  return parts;
}

std::size_t parse_count(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty())
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  if (v.empty()) return out;
  for (const auto& p : split(v, ',')) out.push_back(parse_count(key, p));
  return out;
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string real(double d) {
  std::ostringstream o;
  o.precision(17);
  o << d;
  return o.str();
}

struct Field {
  std::function<void(TrainConfig&, const std::string& key, const std::string& value)> set;
  std::function<std::string(const TrainConfig&)> get;
};

#define VC_COUNT(name, member)                                                                \
  {name, {[](TrainConfig& c, const std::string& k, const std::string& v) { c.member = parse_count(k, v); }, \
          [](const TrainConfig& c) { return std::to_string(c.member); }}}
#define VC_REAL(name, member)                                                                 \
  {name, {[](TrainConfig& c, const std::string& k, const std::string& v) { c.member = parse_real(k, v); }, \
          [](const TrainConfig& c) { return real(c.member); }}}
#define VC_LIST(name, member)                                                                 \
  {name, {[](TrainConfig& c, const std::string& k, const std::string& v) { c.member = parse_list(k, v); }, \
          [](const TrainConfig& c) { return join(c.member); }}}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      {"sample_rate",
       {[](TrainConfig& c, const std::string& k, const std::string& v) {
          c.features.sample_rate = static_cast<int>(parse_count(k, v));
        },
        [](const TrainConfig& c) { return std::to_string(c.features.sample_rate); }}},
      VC_COUNT("fft_size", features.fft_size),
      VC_COUNT("frame_hop", features.frame_hop),
      VC_COUNT("frame_length", features.frame_length),
      VC_COUNT("n_mels", features.n_mels),
      VC_REAL("mel_fmin", features.mel_fmin),
      VC_REAL("mel_fmax", features.mel_fmax),
      {"linguistic_source",
       {[](TrainConfig& c, const std::string& k, const std::string& v) {
          if (v == "conformer") c.linguistic_source = LinguisticSource::conformer;
          else if (v == "precomputed") c.linguistic_source = LinguisticSource::precomputed;
          else throw ConfigError(k + ": expected conformer or precomputed, got '" + v + "'");
        },
        [](const TrainConfig& c) {
          return std::string(c.linguistic_source == LinguisticSource::conformer ? "conformer" : "precomputed");
        }}},
      VC_COUNT("d_g", d_g),
      VC_COUNT("conformer_blocks", conformer_blocks),
      VC_COUNT("conformer_heads", conformer_heads),
      VC_COUNT("conformer_ff_mult", conformer_ff_mult),
      VC_COUNT("conformer_kernel", conformer_kernel),
      VC_COUNT("linguistic_subsample", linguistic_subsample),
      {"freeze_linguistic",
       {[](TrainConfig& c, const std::string& k, const std::string& v) { c.freeze_linguistic = parse_bool(k, v); },
        [](const TrainConfig& c) { return std::string(c.freeze_linguistic ? "true" : "false"); }}},
      VC_COUNT("n_speakers", n_speakers),
      VC_COUNT("d_s", d_s),
      VC_COUNT("d_z", d_z),
      VC_COUNT("prior_hidden", prior_hidden),
      VC_COUNT("prior_blocks", prior_blocks),
      VC_COUNT("prior_heads", prior_heads),
      VC_COUNT("prior_ffn", prior_ffn),
      VC_COUNT("prior_kernel", prior_kernel),
      VC_COUNT("posterior_hidden", posterior_hidden),
      VC_COUNT("posterior_layers", posterior_layers),
      VC_COUNT("posterior_kernel", posterior_kernel),
      VC_COUNT("posterior_dilation_rate", posterior_dilation_rate),
      VC_LIST("upsample_factors", upsample_factors),
      VC_LIST("mrf_kernel_sizes", mrf_kernel_sizes),
      {"mrf_dilations",
       {[](TrainConfig& c, const std::string& k, const std::string& v) {
          c.mrf_dilations.clear();
          for (const auto& group : split(v, ';')) c.mrf_dilations.push_back(parse_list(k, group));
        },
        [](const TrainConfig& c) {
          std::string s;
          for (std::size_t i = 0; i < c.mrf_dilations.size(); ++i) s += (i ? ";" : "") + join(c.mrf_dilations[i]);
          return s;
        }}},
      VC_COUNT("decoder_channels", decoder_channels),
      VC_REAL("leaky_slope", leaky_slope),
      VC_LIST("mpd_periods", mpd_periods),
      VC_COUNT("msd_scales", msd_scales),
      VC_LIST("mpd_channels", mpd_channels),
      VC_LIST("msd_channels", msd_channels),
      VC_COUNT("segment_frames", segment_frames),
      VC_COUNT("batch_size", batch_size),
      VC_COUNT("total_steps", total_steps),
      {"seed",
       {[](TrainConfig& c, const std::string& k, const std::string& v) { c.seed = parse_count(k, v); },
        [](const TrainConfig& c) { return std::to_string(c.seed); }}},
      VC_REAL("lr_g", lr_g),
      VC_REAL("lr_d", lr_d),
      VC_REAL("lr_decay", lr_decay),
      VC_REAL("adam_beta1", adam_beta1),
      VC_REAL("adam_beta2", adam_beta2),
      {"loss_preset",
       {[](TrainConfig& c, const std::string& k, const std::string& v) {
          if (v == "unit") c.weights = LossWeights{};
          else if (v == "practical") c.weights = LossWeights::practical();
          else throw ConfigError(k + ": expected unit or practical, got '" + v + "'");
          c.loss_preset = v;
        },
        [](const TrainConfig& c) { return c.loss_preset; }}},
      VC_REAL("weight_recon", weights.recon),
      VC_REAL("weight_kl", weights.kl),
      VC_REAL("weight_adv", weights.adv),
      VC_REAL("weight_fm", weights.fm),
      VC_COUNT("log_every", log_every),
      VC_COUNT("checkpoint_every", checkpoint_every),
  };
  return table;
}

#undef VC_COUNT
#undef VC_REAL
#undef VC_LIST

}  // namespace

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.features = {24000, 512, 128, 512, 40, 0.0, 12000.0};
  c.d_g = 32;
  c.conformer_blocks = 1;
  c.conformer_heads = 2;
  c.conformer_ff_mult = 2;
  c.conformer_kernel = 7;
  c.d_s = 16;
  c.d_z = 16;
  c.prior_hidden = 32;
  c.prior_blocks = 1;
  c.prior_heads = 2;
  c.prior_ffn = 64;
  c.posterior_hidden = 32;
  c.posterior_layers = 4;
  c.upsample_factors = {8, 16};
  c.mrf_kernel_sizes = {3, 7};
  c.mrf_dilations = {{1, 3}, {1, 3}};
  c.decoder_channels = 64;
  c.mpd_periods = {2, 3, 5};
  c.msd_scales = 2;
  c.mpd_channels = {4, 8, 16, 32, 32};
  c.msd_channels = {8, 8, 16, 16, 32, 32, 32};
  c.segment_frames = 16;
  return c;
}

void TrainConfig::validate() const {
  try {
    features.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(is_supported_rate(features.sample_rate), "sample_rate must be 16000, 24000 or 48000");
  std::size_t hop = 1;
  for (auto f : upsample_factors) hop *= f;
  require(!upsample_factors.empty() && hop == features.frame_hop,
          "product of upsample_factors (" + std::to_string(hop) + ") must equal frame_hop (" +
              std::to_string(features.frame_hop) + ")");
  require(d_g > 0 && d_s > 0 && d_z > 0, "d_g, d_s and d_z must be positive");
  require(linguistic_subsample >= 1, "linguistic_subsample must be at least 1");
  if (linguistic_source == LinguisticSource::conformer) {
    require(conformer_heads > 0 && d_g % conformer_heads == 0, "d_g must be divisible by conformer_heads");
    require(conformer_kernel % 2 == 1, "conformer_kernel must be odd");
  }
  require(prior_heads > 0 && prior_hidden % prior_heads == 0, "prior_hidden must be divisible by prior_heads");
  require(prior_kernel % 2 == 1, "prior_kernel must be odd");
  require(posterior_kernel % 2 == 1, "posterior_kernel must be odd");
  require(posterior_layers > 0 && posterior_dilation_rate > 0, "posterior_layers and dilation rate must be positive");
  require(segment_frames > 0, "segment_frames must be positive");
  require(batch_size > 0, "batch_size must be positive");
  require(lr_g > 0 && lr_d > 0, "learning rates must be positive");
  require(lr_decay > 0 && lr_decay <= 1, "lr_decay must lie in (0, 1]");
  require(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1, "adam betas must lie in [0, 1)");
  require(weights.recon >= 0 && weights.kl >= 0 && weights.adv >= 0 && weights.fm >= 0,
          "loss weights must be non-negative");
  try {
    decoder_config().validate();
    discriminator_config().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  require(segment_frames * features.frame_hop >= discriminator_config().min_length(),
          "segment too short for the discriminators");
  require(segment_frames * features.frame_hop >= features.frame_length,
          "segment shorter than one analysis frame");
}

ConformerConfig TrainConfig::conformer_config() const {
  return {features.n_mels, d_g, conformer_blocks, conformer_heads, conformer_ff_mult, conformer_kernel,
          linguistic_subsample};
}

PriorConfig TrainConfig::prior_config() const {
  return {d_g, d_s, d_z, prior_hidden, prior_blocks, prior_heads, prior_ffn, prior_kernel};
}

PosteriorConfig TrainConfig::posterior_config() const {
  return {features.fft_bins(), d_s, d_z, posterior_hidden, posterior_layers, posterior_kernel,
          posterior_dilation_rate};
}

DecoderConfig TrainConfig::decoder_config() const {
  return {d_z, d_s, upsample_factors, mrf_kernel_sizes, mrf_dilations, decoder_channels, leaky_slope};
}

DiscriminatorConfig TrainConfig::discriminator_config() const {
  return {mpd_periods, msd_scales, mpd_channels, msd_channels, leaky_slope};
}

TrainConfig parse_config(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    if (!fields().count(key)) throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    for (const auto& e : entries)
      if (e.first == key) throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    entries.emplace_back(std::move(key), trim(line.substr(eq + 1)));
  }
  TrainConfig cfg;
  // The preset goes first so explicit weight_* keys override it.
  for (const auto& [k, v] : entries)
    if (k == "loss_preset") fields().at(k).set(cfg, k, v);
  for (const auto& [k, v] : entries)
    if (k != "loss_preset") fields().at(k).set(cfg, k, v);
  cfg.validate();
  return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_string(const TrainConfig& cfg) {
  std::string out;
  for (const auto& [k, f] : fields()) out += k + " = " + f.get(cfg) + "\n";
  return out;
}

}  // namespace vc
