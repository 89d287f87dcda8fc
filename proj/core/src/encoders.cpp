#include "vc/encoders.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "vc/error.hpp"

namespace vc {

namespace {

Tensor split_gaussian_mean(const Tensor& stats, std::size_t d_z) { return ops::slice_channels(stats, 0, d_z); }

Tensor split_gaussian_logvar(const Tensor& stats, std::size_t d_z) {
  return ops::clamp(ops::slice_channels(stats, d_z, d_z), kLogvarMin, kLogvarMax);
}

Conv1d pointwise(std::size_t in, std::size_t out, Rng& rng, Norm norm = Norm::none) {
  ConvOptions o;
  o.norm = norm;
  return Conv1d(in, out, 1, o, rng);
}

Tensor self_attention(const Conv1d& q, const Conv1d& k, const Conv1d& v, const Conv1d& out,
                      const Tensor& x, std::size_t heads) {
  return out(ops::attention(q(x), k(x), v(x), heads));
}

}  // namespace

Tensor broadcast_time(const Tensor& s, std::size_t frames) {
  return ops::add(Tensor::zeros({1, s.shape().c, frames}), s);
}

// ---------------------------------------------------------------------------

ConformerEncoder::ConformerEncoder(const ConformerConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.d_model % cfg.heads != 0) throw std::invalid_argument("conformer: d_model % heads != 0");
  if (cfg.subsample == 0) throw std::invalid_argument("conformer: subsample must be >= 1");
  ConvOptions in_opts;
  in_opts.stride = cfg.subsample;
  in_opts.explicit_padding = true;
  input_ = Conv1d(cfg.n_mels, cfg.d_model, cfg.subsample, in_opts, rng);
  const std::size_t d = cfg.d_model;
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    Block blk;
    blk.ff1 = {LayerNorm(d), pointwise(d, d * cfg.ff_mult, rng), pointwise(d * cfg.ff_mult, d, rng)};
    blk.ff2 = {LayerNorm(d), pointwise(d, d * cfg.ff_mult, rng), pointwise(d * cfg.ff_mult, d, rng)};
    blk.attn_norm = LayerNorm(d);
    blk.query = pointwise(d, d, rng);
    blk.key = pointwise(d, d, rng);
    blk.value = pointwise(d, d, rng);
    blk.attn_out = pointwise(d, d, rng);
    blk.conv_norm = LayerNorm(d);
    blk.pointwise_in = pointwise(d, 2 * d, rng);
    ConvOptions dw;
    dw.groups = d;
    blk.depthwise = Conv1d(d, d, cfg.conv_kernel, dw, rng);
    blk.conv_mid_norm = LayerNorm(d);
    blk.pointwise_out = pointwise(d, d, rng);
    blk.out_norm = LayerNorm(d);
    blocks_.push_back(std::move(blk));
  }
}

Tensor ConformerEncoder::feed_forward(const FeedForward& ff, const Tensor& x) const {
  return ff.down(ops::silu(ff.up(ff.norm(x))));
}

Tensor ConformerEncoder::forward(const Tensor& mel) const {
  if (mel.shape().c != cfg_.n_mels)
    throw std::invalid_argument("conformer: expected " + std::to_string(cfg_.n_mels) +
                                " mel channels, got " + std::to_string(mel.shape().c));
  Tensor x = mel;
  const std::size_t rem = mel.shape().t % cfg_.subsample;
  if (rem != 0) x = ops::pad_reflect(x, 0, cfg_.subsample - rem);
  x = input_(x);
  x = ops::add(x, sinusoidal_positions(cfg_.d_model, x.shape().t));
  for (const auto& blk : blocks_) {
    x = ops::add(x, ops::scale(feed_forward(blk.ff1, x), 0.5));
    Tensor h = blk.attn_norm(x);
    x = ops::add(x, self_attention(blk.query, blk.key, blk.value, blk.attn_out, h, cfg_.heads));
    h = ops::glu(blk.pointwise_in(blk.conv_norm(x)));
    h = blk.pointwise_out(ops::silu(blk.conv_mid_norm(blk.depthwise(h))));
    x = ops::add(x, h);
    x = ops::add(x, ops::scale(feed_forward(blk.ff2, x), 0.5));
    x = blk.out_norm(x);
  }
  return x;
}

LinguisticEmbedding ConformerEncoder::encode(const MelSpectrogram& mel) const {
  if (mel.n_mels != cfg_.n_mels)
    throw std::invalid_argument("conformer: expected " + std::to_string(cfg_.n_mels) +
                                " mel channels, got " + std::to_string(mel.n_mels));
  return {forward(mel.to_tensor())};
}

void ConformerEncoder::collect(const std::string& prefix, ParamList& out) const {
  input_.collect(prefix + ".input", out);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const auto& blk = blocks_[b];
    const std::string p = prefix + ".block" + std::to_string(b);
    for (auto [name, ff] : {std::pair{"ff1", &blk.ff1}, std::pair{"ff2", &blk.ff2}}) {
      ff->norm.collect(p + "." + name + ".norm", out);
      ff->up.collect(p + "." + name + ".up", out);
      ff->down.collect(p + "." + name + ".down", out);
    }
    blk.attn_norm.collect(p + ".attn_norm", out);
    blk.query.collect(p + ".query", out);
    blk.key.collect(p + ".key", out);
    blk.value.collect(p + ".value", out);
    blk.attn_out.collect(p + ".attn_out", out);
    blk.conv_norm.collect(p + ".conv_norm", out);
    blk.pointwise_in.collect(p + ".pointwise_in", out);
    blk.depthwise.collect(p + ".depthwise", out);
    blk.conv_mid_norm.collect(p + ".conv_mid_norm", out);
    blk.pointwise_out.collect(p + ".pointwise_out", out);
    blk.out_norm.collect(p + ".out_norm", out);
  }
}

LinguisticEmbedding PrecomputedFeatures::encode(const MelSpectrogram&) const { return features_; }

LinguisticEmbedding read_ppg(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError("cannot open " + path.string());
  std::array<unsigned char, 8> header{};
  if (!in.read(reinterpret_cast<char*>(header.data()), 8))
    throw TruncatedFileError(path.string() + ": truncated ppg header");
  auto u32 = [&](std::size_t o) {
    return std::uint32_t(header[o]) | (std::uint32_t(header[o + 1]) << 8) |
           (std::uint32_t(header[o + 2]) << 16) | (std::uint32_t(header[o + 3]) << 24);
  };
  const std::size_t frames = u32(0), dim = u32(4);
  if (frames == 0 || dim == 0) throw DataError(path.string() + ": empty ppg");
  std::vector<unsigned char> raw(frames * dim * 4);
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
    throw TruncatedFileError(path.string() + ": truncated ppg payload");
  std::vector<double> values(frames * dim);
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t d = 0; d < dim; ++d) {
      const unsigned char* p = raw.data() + 4 * (f * dim + d);
      const std::uint32_t bits = std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
                                 (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
      const float v = std::bit_cast<float>(bits);
      if (!std::isfinite(v)) throw DataError(path.string() + ": non-finite ppg value");
      values[d * frames + f] = v;
    }
  return {Tensor::from({1, dim, frames}, std::move(values))};
}

void write_ppg(const std::filesystem::path& path, const LinguisticEmbedding& g) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  auto put = [&](std::uint32_t v) {
    const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                       static_cast<char>((v >> 16) & 0xff), static_cast<char>(v >> 24)};
    out.write(b, 4);
  };
  const std::size_t frames = g.frames(), dim = g.dim();
  put(static_cast<std::uint32_t>(frames));
  put(static_cast<std::uint32_t>(dim));
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t d = 0; d < dim; ++d)
      put(std::bit_cast<std::uint32_t>(static_cast<float>(g.values.at(0, d, f))));
}

// ---------------------------------------------------------------------------

SpeakerTable::SpeakerTable(std::size_t speakers, std::size_t dim, Rng& rng) {
  if (speakers == 0) throw std::invalid_argument("speaker table needs at least one speaker");
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(speakers * dim);
  for (double& x : v) x = dist(rng);
  table_ = Tensor::from({speakers, dim, 1}, std::move(v), true);
}

SpeakerEmbedding SpeakerTable::lookup(std::size_t speaker_id) const {
  if (speaker_id >= size())
    throw std::out_of_range("unknown speaker index " + std::to_string(speaker_id));
  return {ops::select_row(table_, speaker_id), speaker_id};
}

void SpeakerTable::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".table", table_, true});
}

// ---------------------------------------------------------------------------

PriorEncoder::PriorEncoder(const PriorConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.hidden % cfg.heads != 0) throw std::invalid_argument("prior: hidden % heads != 0");
  input_ = pointwise(cfg.d_g + cfg.d_s, cfg.hidden, rng);
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    Block blk;
    blk.query = pointwise(cfg.hidden, cfg.hidden, rng);
    blk.key = pointwise(cfg.hidden, cfg.hidden, rng);
    blk.value = pointwise(cfg.hidden, cfg.hidden, rng);
    blk.attn_out = pointwise(cfg.hidden, cfg.hidden, rng);
    blk.norm1 = LayerNorm(cfg.hidden);
    blk.conv1 = Conv1d(cfg.hidden, cfg.ffn, cfg.kernel, {}, rng);
    blk.conv2 = Conv1d(cfg.ffn, cfg.hidden, cfg.kernel, {}, rng);
    blk.norm2 = LayerNorm(cfg.hidden);
    blocks_.push_back(std::move(blk));
  }
  proj_ = pointwise(cfg.hidden, 2 * cfg.d_z, rng);
}

GaussianSequence PriorEncoder::encode(const LinguisticEmbedding& g, const SpeakerEmbedding& s) const {
  if (g.dim() != cfg_.d_g || s.dim() != cfg_.d_s)
    throw std::invalid_argument("prior: expected d_g=" + std::to_string(cfg_.d_g) + ", d_s=" +
                                std::to_string(cfg_.d_s) + ", got " + std::to_string(g.dim()) +
                                ", " + std::to_string(s.dim()));
  const std::size_t frames = g.frames();
  const std::array<Tensor, 2> parts{g.values, broadcast_time(s.values, frames)};
  Tensor x = input_(ops::concat_channels(parts));
  x = ops::add(x, sinusoidal_positions(cfg_.hidden, frames));
  for (const auto& blk : blocks_) {
    x = blk.norm1(ops::add(x, self_attention(blk.query, blk.key, blk.value, blk.attn_out, x, cfg_.heads)));
    x = blk.norm2(ops::add(x, blk.conv2(ops::relu(blk.conv1(x)))));
  }
  Tensor stats = proj_(x);
  return {split_gaussian_mean(stats, cfg_.d_z), split_gaussian_logvar(stats, cfg_.d_z)};
}

void PriorEncoder::collect(const std::string& prefix, ParamList& out) const {
  input_.collect(prefix + ".input", out);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const auto& blk = blocks_[b];
    const std::string p = prefix + ".block" + std::to_string(b);
    blk.query.collect(p + ".query", out);
    blk.key.collect(p + ".key", out);
    blk.value.collect(p + ".value", out);
    blk.attn_out.collect(p + ".attn_out", out);
    blk.norm1.collect(p + ".norm1", out);
    blk.conv1.collect(p + ".conv1", out);
    blk.conv2.collect(p + ".conv2", out);
    blk.norm2.collect(p + ".norm2", out);
  }
  proj_.collect(prefix + ".proj", out);
}

// ---------------------------------------------------------------------------

PosteriorEncoder::PosteriorEncoder(const PosteriorConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.kernel % 2 == 0) throw std::invalid_argument("posterior: kernel must be odd");
  if (cfg.layers == 0 || cfg.dilation_rate == 0)
    throw std::invalid_argument("posterior: need at least one layer and dilation_rate >= 1");
  pre_ = pointwise(cfg.fft_bins, cfg.hidden, rng);
  std::size_t dilation = 1;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    ConvOptions in_opts;
    in_opts.dilation = dilation;
    in_opts.norm = Norm::weight;
    Layer layer;
    layer.in = Conv1d(cfg.hidden, 2 * cfg.hidden, cfg.kernel, in_opts, rng);
    layer.cond = pointwise(cfg.d_s, 2 * cfg.hidden, rng, Norm::weight);
    const std::size_t rs = (l + 1 < cfg.layers) ? 2 * cfg.hidden : cfg.hidden;
    layer.res_skip = pointwise(cfg.hidden, rs, rng, Norm::weight);
    layers_.push_back(std::move(layer));
    dilation *= cfg.dilation_rate;
  }
  proj_ = pointwise(cfg.hidden, 2 * cfg.d_z, rng);
}

std::size_t PosteriorEncoder::receptive_radius() const {
  std::size_t r = 0, dilation = 1;
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    r += dilation * (cfg_.kernel - 1) / 2;
    dilation *= cfg_.dilation_rate;
  }
  return r;
}

GaussianSequence PosteriorEncoder::encode(const LinearSpectrogram& x, const SpeakerEmbedding& s) const {
  return encode(x.to_tensor(), s);
}

GaussianSequence PosteriorEncoder::encode(const Tensor& x_linear, const SpeakerEmbedding& s) const {
  if (x_linear.shape().c != cfg_.fft_bins || s.dim() != cfg_.d_s)
    throw std::invalid_argument("posterior: expected " + std::to_string(cfg_.fft_bins) +
                                " bins and d_s=" + std::to_string(cfg_.d_s) + ", got " +
                                std::to_string(x_linear.shape().c) + " and " + std::to_string(s.dim()));
  ++calls_;
  const std::size_t h = cfg_.hidden;
  Tensor x = pre_(x_linear);
  Tensor skip;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    Tensor z = ops::add(layer.in(x), layer.cond(s.values));
    Tensor acts = ops::mul(ops::tanh(ops::slice_channels(z, 0, h)),
                           ops::sigmoid(ops::slice_channels(z, h, h)));
    Tensor rs = layer.res_skip(acts);
    Tensor skip_part = rs;
    if (l + 1 < layers_.size()) {
      x = ops::add(x, ops::slice_channels(rs, 0, h));
      skip_part = ops::slice_channels(rs, h, h);
    }
    skip = skip.defined() ? ops::add(skip, skip_part) : skip_part;
  }
  Tensor stats = proj_(skip);
  return {split_gaussian_mean(stats, cfg_.d_z), split_gaussian_logvar(stats, cfg_.d_z)};
}

void PosteriorEncoder::collect(const std::string& prefix, ParamList& out) const {
  pre_.collect(prefix + ".pre", out);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const std::string p = prefix + ".layer" + std::to_string(l);
    layers_[l].in.collect(p + ".in", out);
    layers_[l].cond.collect(p + ".cond", out);
    layers_[l].res_skip.collect(p + ".res_skip", out);
  }
  proj_.collect(prefix + ".proj", out);
}

}  // namespace vc
