#include "vc/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "vc/error.hpp"

namespace vc {

namespace {

constexpr char kMagic[8] = {'V', 'C', 'C', 'K', 'P', 'T', '\0', '\1'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  template <typename T>
  void pod(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void doubles(std::span<const double> v) {
    pod<std::uint64_t>(v.size());
    out_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string origin) : in_(in), origin_(std::move(origin)) {}
  template <typename T>
  T pod() {
    T v{};
    read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
  }
  std::string str() {
    const auto n = length();
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }
  std::vector<double> doubles() {
    std::vector<double> v(length());
    read(reinterpret_cast<char*>(v.data()), v.size() * sizeof(double));
    return v;
  }

 private:
  std::size_t length() {
    const auto n = pod<std::uint64_t>();
    if (n > (std::uint64_t{1} << 34)) throw DataError(origin_ + ": corrupt length field");
    return static_cast<std::size_t>(n);
  }
  void read(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw TruncatedFileError(origin_ + ": truncated checkpoint");
  }
  std::istream& in_;
  std::string origin_;
};

void write_optimizer(Writer& w, const Adam& opt) {
  w.pod<double>(opt.lr());
  w.pod<std::uint64_t>(opt.steps());
  const auto& params = opt.params();
  w.pod<std::uint64_t>(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    w.str(params[i].name);
    w.doubles(opt.first_moments()[i]);
    w.doubles(opt.second_moments()[i]);
  }
}

void read_optimizer(Reader& r, Adam& opt, const std::string& origin) {
  opt.set_lr(r.pod<double>());
  opt.set_steps(r.pod<std::uint64_t>());
  const auto n = r.pod<std::uint64_t>();
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < opt.params().size(); ++i) index[opt.params()[i].name] = i;
  if (n != opt.params().size()) throw DataError(origin + ": optimizer parameter count mismatch");
  for (std::uint64_t k = 0; k < n; ++k) {
    const std::string name = r.str();
    auto m = r.doubles();
    auto v = r.doubles();
    auto it = index.find(name);
    if (it == index.end()) throw DataError(origin + ": optimizer state for unknown parameter " + name);
    auto& dst_m = opt.first_moments()[it->second];
    auto& dst_v = opt.second_moments()[it->second];
    if (m.size() != dst_m.size() || v.size() != dst_v.size())
      throw DataError(origin + ": optimizer state size mismatch for " + name);
    dst_m = std::move(m);
    dst_v = std::move(v);
  }
}

struct Header {
  std::string config;
  std::vector<std::string> speakers;
  bool has_trainer = false;
};

Header read_header(Reader& r, const std::string& origin) {
  char magic[8];
  for (char& c : magic) c = r.pod<char>();
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw UnsupportedFormatError(origin + ": not a checkpoint");
  if (const auto v = r.pod<std::uint32_t>(); v != kVersion)
    throw UnsupportedFormatError(origin + ": unsupported checkpoint version " + std::to_string(v));
  Header h;
  h.config = r.str();
  const auto n = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) h.speakers.push_back(r.str());
  h.has_trainer = r.pod<std::uint8_t>() != 0;
  return h;
}

void read_parameters(Reader& r, const VoiceConversionModel& model, const std::string& origin) {
  ParamList params = model.parameters();
  std::map<std::string, Tensor> by_name;
  for (auto& p : params) by_name[p.name] = p.tensor;
  const auto n = r.pod<std::uint64_t>();
  if (n != params.size())
    throw DataError(origin + ": checkpoint has " + std::to_string(n) + " tensors, model expects " +
                    std::to_string(params.size()));
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::string name = r.str();
    auto values = r.doubles();
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError(origin + ": unexpected tensor " + name);
    auto dst = it->second.mutable_values();
    if (dst.size() != values.size()) throw DataError(origin + ": size mismatch for " + name);
    std::copy(values.begin(), values.end(), dst.begin());
  }
}

std::ifstream open(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError("cannot open checkpoint " + path.string());
  return in;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const VoiceConversionModel& model, const Trainer* trainer) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    Writer w(out);
    out.write(kMagic, sizeof kMagic);
    w.pod<std::uint32_t>(kVersion);
    w.str(to_string(model.config()));
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(model.speakers().size()));
    for (const auto& s : model.speakers()) w.str(s);
    w.pod<std::uint8_t>(trainer ? 1 : 0);
    const ParamList params = model.parameters();
    w.pod<std::uint64_t>(params.size());
    for (const auto& p : params) {
      w.str(p.name);
      w.doubles(p.tensor.values());
    }
    if (trainer) {
      w.pod<std::uint64_t>(trainer->step());
      w.pod<std::uint64_t>(trainer->epoch());
      std::ostringstream rng;
      rng << trainer->rng();
      w.str(rng.str());
      write_optimizer(w, trainer->generator_optimizer());
      write_optimizer(w, trainer->discriminator_optimizer());
    }
    if (!out) throw DataError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

std::unique_ptr<VoiceConversionModel> load_model(const std::filesystem::path& path) {
  auto in = open(path);
  const std::string origin = path.string();
  Reader r(in, origin);
  Header h = read_header(r, origin);
  TrainConfig cfg;
  try {
    cfg = parse_config(h.config);
  } catch (const ConfigError& e) {
    throw DataError(origin + ": embedded config invalid: " + e.what());
  }
  auto model = std::make_unique<VoiceConversionModel>(cfg, h.speakers);
  read_parameters(r, *model, origin);
  return model;
}

void restore_trainer(const std::filesystem::path& path, Trainer& trainer) {
  auto in = open(path);
  const std::string origin = path.string();
  Reader r(in, origin);
  Header h = read_header(r, origin);
  if (!h.has_trainer) throw DataError(origin + ": checkpoint carries no training state");
  read_parameters(r, trainer.model(), origin);
  const auto step = r.pod<std::uint64_t>();
  const auto epoch = r.pod<std::uint64_t>();
  std::istringstream rng(r.str());
  rng >> trainer.rng();
  if (!rng) throw DataError(origin + ": corrupt RNG state");
  read_optimizer(r, trainer.generator_optimizer(), origin);
  read_optimizer(r, trainer.discriminator_optimizer(), origin);
  trainer.restore_counters(step, epoch);
}

}  // namespace vc
