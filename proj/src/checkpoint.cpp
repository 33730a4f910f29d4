#include "nowcast/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "nowcast/baselines.hpp"
#include "nowcast/errors.hpp"
#include "nowcast/models.hpp"
#include "nowcast/text.hpp"

namespace nowcast {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint64_t uint(int width, const char* what) {
    need(static_cast<std::size_t>(width), what);
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes_[at_ + static_cast<std::size_t>(i)]) << (8 * i);
    at_ += static_cast<std::size_t>(width);
    return v;
  }

  std::string string(const char* what) {
    const std::size_t n = uint(4, what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + at_), n);
    at_ += n;
    return s;
  }

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - at_ < n) {
      throw LengthError(std::string("NCP1: truncated while reading ") + what + " at byte " + std::to_string(at_));
    }
  }

  bool done() const { return at_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - at_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t at_ = 0;
};

std::string bn_prefix(const BatchNormState& bn) {
  const std::string& g = bn.gamma.name;
  const std::string suffix = ".gamma";
  return g.size() > suffix.size() ? g.substr(0, g.size() - suffix.size()) : g;
}

}  // namespace

const Tensor& Checkpoint::at(const std::string& name) const {
  for (const auto& [n, t] : entries) {
    if (n == name) return t;
  }
  throw FormatError("checkpoint (" + kind + "): missing entry " + name);
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out;
  for (char c : {'N', 'C', 'P', '1'}) out.push_back(static_cast<std::uint8_t>(c));
  put_u32(out, kNcpVersion);
  put_string(out, ckpt.kind);
  put_string(out, ckpt.config);
  put_u32(out, static_cast<std::uint32_t>(ckpt.entries.size()));
  for (const auto& [name, t] : ckpt.entries) {
    put_string(out, name);
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_u64(out, d);
    for (double v : t.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw LengthError("NCP1: file holds " + std::to_string(bytes.size()) + " bytes");
  if (std::memcmp(bytes.data(), "NCP1", 4) != 0) throw FormatError("NCP1: bad magic, expected \"NCP1\"");
  Reader r(bytes.subspan(4));
  const auto version = r.uint(4, "version");
  if (version != kNcpVersion) throw FormatError("NCP1: unsupported version " + std::to_string(version));
  Checkpoint c;
  c.kind = r.string("kind");
  c.config = r.string("config");
  const std::size_t n = r.uint(4, "entry count");
  std::set<std::string> seen;
  for (std::size_t i = 0; i < n; ++i) {
    std::string name = r.string("entry name");
    if (!seen.insert(name).second) throw FormatError("NCP1: duplicate entry " + name);
    const std::size_t rank = r.uint(4, "rank");
    if (rank > 8) throw FormatError("NCP1: entry " + name + " has rank " + std::to_string(rank));
    Shape shape(rank);
    std::size_t count = 1;
    for (auto& d : shape) {
      d = r.uint(8, "dims");
      if (d != 0 && count > r.remaining() / d) throw LengthError("NCP1: entry " + name + " exceeds the file");
      count *= d;
    }
    r.need(8 * count, name.c_str());
    std::vector<double> data(count);
    for (auto& v : data) v = std::bit_cast<double>(r.uint(8, "data"));
    c.entries.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!r.done()) throw LengthError("NCP1: " + std::to_string(r.remaining()) + " trailing bytes");
  return c;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

Checkpoint to_checkpoint(Model& model) {
  Checkpoint c;
  c.kind = model.name();
  c.config = model.config().to_text();
  for (auto* p : model.params()) c.entries.emplace_back(p->name, p->value);
  for (auto* bn : model.batchnorms()) {
    const std::string prefix = bn_prefix(*bn);
    const std::size_t C = bn->channels();
    c.entries.emplace_back(prefix + ".running_mean", Tensor({C}, bn->running_mean));
    c.entries.emplace_back(prefix + ".running_var", Tensor({C}, bn->running_var));
    c.entries.emplace_back(prefix + ".trained", Tensor({1}, bn->trained ? 1.0 : 0.0));
  }
  return c;
}

void load_into(Model& model, const Checkpoint& c) {
  if (c.kind != model.name()) throw FormatError("checkpoint kind " + c.kind + " does not match " + model.name());
  if (ModelConfig::from_text(c.config) != model.config()) {
    throw FormatError("checkpoint configuration does not match the model");
  }
  std::size_t expected = 0;
  for (auto* p : model.params()) {
    const Tensor& t = c.at(p->name);
    if (t.shape() != p->value.shape()) {
      throw FormatError("checkpoint entry " + p->name + " has shape " + shape_string(t.shape()) + ", model expects " +
                        shape_string(p->value.shape()));
    }
    p->value = t;
    ++expected;
  }
  for (auto* bn : model.batchnorms()) {
    const std::string prefix = bn_prefix(*bn);
    const Tensor& m = c.at(prefix + ".running_mean");
    const Tensor& v = c.at(prefix + ".running_var");
    const Tensor& tr = c.at(prefix + ".trained");
    if (m.size() != bn->channels() || v.size() != bn->channels() || tr.size() != 1) {
      throw FormatError("checkpoint statistics of " + prefix + " have the wrong length");
    }
    bn->running_mean = m.storage();
    bn->running_var = v.storage();
    bn->trained = tr[0] != 0.0;
    expected += 3;
  }
  if (expected != c.entries.size()) {
    throw FormatError("checkpoint holds " + std::to_string(c.entries.size()) + " entries, model uses " +
                      std::to_string(expected));
  }
}

std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& c) {
  auto model = std::make_unique<Model>(ModelConfig::from_text(c.config));
  load_into(*model, c);
  return model;
}

Checkpoint to_checkpoint(const Persistence& bm) {
  Checkpoint c;
  c.kind = "BM";
  c.config = "n_in=" + std::to_string(bm.n_in()) + "\nn_out=" + std::to_string(bm.n_out()) + "\n";
  return c;
}

std::unique_ptr<Forecaster> load_forecaster(const Checkpoint& c) {
  if (c.kind == "LR") return std::make_unique<LinearRegression>(linear_from_checkpoint(c));
  if (c.kind == "RF") return std::make_unique<RandomForest>(forest_from_checkpoint(c));
  if (c.kind == "BM") {
    const auto kv = parse_key_values(c.config, "BM checkpoint");
    const std::size_t n_in = key_size(kv, "n_in", "BM checkpoint"), n_out = key_size(kv, "n_out", "BM checkpoint");
    if (n_in == 0 || n_out == 0) throw FormatError("BM checkpoint: frame counts must be positive");
    return std::make_unique<Persistence>(n_in, n_out);
  }
  return model_from_checkpoint(c);
}

}  // namespace nowcast
