#include "nowcast/grid.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>

#include "nowcast/errors.hpp"
#include "nowcast/rng.hpp"

namespace nowcast {

namespace {

constexpr std::uint32_t kNcgVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[at + i]) << (8 * i);
  return v;
}

void check_range(const std::pair<double, double>& r, const char* name) {
  if (!(r.first <= r.second)) throw ConfigError(std::string("synth: ") + name + " has min > max");
}

}  // namespace

void Sequence::validate() const {
  if (dt_seconds <= 0) throw ConfigError("sequence dt_seconds must be positive");
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto& f = frames[i];
    if (f.values.size() != f.height * f.width) {
      throw DimensionError("frame " + std::to_string(i) + ": value count " + std::to_string(f.values.size()) +
                           " != " + std::to_string(f.height) + "x" + std::to_string(f.width));
    }
    if (f.height != frames.front().height || f.width != frames.front().width) {
      throw DimensionError("frame " + std::to_string(i) + " is " + std::to_string(f.height) + "x" +
                           std::to_string(f.width) + ", frame 0 is " + std::to_string(frames.front().height) + "x" +
                           std::to_string(frames.front().width));
    }
    if (i > 0 && f.timestamp != frames[i - 1].timestamp + dt_seconds) {
      throw DataError("frame " + std::to_string(i) + ": timestamp does not follow frame " + std::to_string(i - 1) +
                      " by dt_seconds");
    }
    for (float v : f.values) {
      if (!std::isfinite(v) || v < 0.0f) {
        throw DataError("frame " + std::to_string(i) + ": precipitation rate must be finite and nonnegative");
      }
    }
  }
}

void WindowConfig::validate() const {
  if (n_in < 1 || n_out < 1) throw ConfigError("window: n_in and n_out must be >= 1");
  if (stride < 1) throw ConfigError("window: stride must be >= 1");
}

void SynthConfig::validate() const {
  if (height < 1 || width < 1) throw ConfigError("synth: grid must be at least 1x1");
  if (n_frames < 1) throw ConfigError("synth: n_frames must be >= 1");
  check_range(intensity_range, "intensity_range");
  check_range(velocity_range, "velocity_range");
  check_range(heading_range, "heading_range");
  check_range(growth_rate_range, "growth_rate_range");
  check_range(sigma_range, "sigma_range");
  check_range(angular_rate_range, "angular_rate_range");
  if (intensity_range.first < 0) throw ConfigError("synth: intensities must be nonnegative");
  if (sigma_range.first <= 0) throw ConfigError("synth: sigma must be positive");
  if (!(noise_std >= 0)) throw ConfigError("synth: noise_std must be nonnegative");
  if (dt_seconds <= 0) throw ConfigError("synth: dt_seconds must be positive");
}

std::vector<SynthCell> synth_cells(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed, 1);
  std::vector<SynthCell> cells(cfg.n_cells);
  for (auto& c : cells) {
    c.row = rng.uniform(0.0, static_cast<double>(cfg.height));
    c.col = rng.uniform(0.0, static_cast<double>(cfg.width));
    const double speed = rng.uniform(cfg.velocity_range.first, cfg.velocity_range.second);
    const double heading = rng.uniform(cfg.heading_range.first, cfg.heading_range.second);
    c.v_col = speed * std::cos(heading);
    c.v_row = speed * std::sin(heading);
    c.amplitude = rng.uniform(cfg.intensity_range.first, cfg.intensity_range.second);
    c.growth = rng.uniform(cfg.growth_rate_range.first, cfg.growth_rate_range.second);
    c.sigma_major = rng.uniform(cfg.sigma_range.first, cfg.sigma_range.second);
    c.sigma_minor = rng.uniform(cfg.sigma_range.first, cfg.sigma_range.second);
    c.angle = rng.uniform(0.0, std::numbers::pi);
    c.angular_rate = rng.uniform(cfg.angular_rate_range.first, cfg.angular_rate_range.second);
  }
  return cells;
}

Sequence synthesize(const SynthConfig& cfg) {
  const auto cells = synth_cells(cfg);
  Rng noise(cfg.seed, 2);
  Sequence seq;
  seq.dt_seconds = cfg.dt_seconds;
  seq.frames.reserve(cfg.n_frames);
  const double H = static_cast<double>(cfg.height), W = static_cast<double>(cfg.width);
  std::vector<double> field(cfg.height * cfg.width);
  for (std::size_t t = 0; t < cfg.n_frames; ++t) {
    const double tt = static_cast<double>(t);
    std::fill(field.begin(), field.end(), 0.0);
    for (const auto& c : cells) {
      const double cr = c.row + c.v_row * tt, cc = c.col + c.v_col * tt;
      const double amp = c.amplitude * std::exp(c.growth * tt);
      const double th = c.angle + c.angular_rate * tt;
      const double cs = std::cos(th), sn = std::sin(th);
      const double ia = 1.0 / (c.sigma_major * c.sigma_major), ib = 1.0 / (c.sigma_minor * c.sigma_minor);
      for (std::size_t r = 0; r < cfg.height; ++r) {
        double dy = static_cast<double>(r) - cr;
        dy -= H * std::round(dy / H);
        for (std::size_t col = 0; col < cfg.width; ++col) {
          double dx = static_cast<double>(col) - cc;
          dx -= W * std::round(dx / W);
          const double u = cs * dx + sn * dy, v = -sn * dx + cs * dy;
          field[r * cfg.width + col] += amp * std::exp(-0.5 * (u * u * ia + v * v * ib));
        }
      }
    }
    GridFrame f(cfg.height, cfg.width, cfg.start_time + static_cast<std::int64_t>(t) * cfg.dt_seconds);
    for (std::size_t i = 0; i < field.size(); ++i) {
      double v = field[i];
      if (cfg.noise_std > 0) v += noise.normal(0.0, cfg.noise_std);
      f.values[i] = static_cast<float>(std::max(0.0, v));
    }
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

std::vector<std::uint8_t> encode_sequence(const Sequence& seq) {
  seq.validate();
  std::vector<std::uint8_t> out;
  out.reserve(kNcgHeaderBytes + 4 * seq.size() * seq.height() * seq.width());
  for (char c : {'N', 'C', 'G', '1'}) out.push_back(static_cast<std::uint8_t>(c));
  put_u32(out, kNcgVersion);
  put_u32(out, static_cast<std::uint32_t>(seq.size()));
  put_u32(out, static_cast<std::uint32_t>(seq.height()));
  put_u32(out, static_cast<std::uint32_t>(seq.width()));
  put_u32(out, static_cast<std::uint32_t>(seq.dt_seconds));
  for (const auto& f : seq.frames) {
    for (float v : f.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Sequence decode_sequence(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kNcgHeaderBytes) {
    throw LengthError("NCG: file holds " + std::to_string(bytes.size()) + " bytes, header needs 24");
  }
  if (std::memcmp(bytes.data(), "NCG1", 4) != 0) throw FormatError("NCG: bad magic, expected \"NCG1\"");
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kNcgVersion) throw FormatError("NCG: unsupported version " + std::to_string(version));
  const std::size_t T = get_u32(bytes, 8), H = get_u32(bytes, 12), W = get_u32(bytes, 16);
  const std::uint32_t dt = get_u32(bytes, 20);
  if (dt == 0) throw FormatError("NCG: dt_seconds must be positive");
  const std::size_t expected = kNcgHeaderBytes + 4 * T * H * W;
  if (bytes.size() != expected) {
    throw LengthError("NCG: header promises " + std::to_string(T) + " frames of " + std::to_string(H) + "x" +
                      std::to_string(W) + " (" + std::to_string(expected) + " bytes), file has " +
                      std::to_string(bytes.size()));
  }
  Sequence seq;
  seq.dt_seconds = dt;
  seq.frames.reserve(T);
  std::size_t at = kNcgHeaderBytes;
  for (std::size_t t = 0; t < T; ++t) {
    GridFrame f(H, W, static_cast<std::int64_t>(t) * dt);
    for (auto& v : f.values) {
      v = std::bit_cast<float>(get_u32(bytes, at));
      at += 4;
      if (!std::isfinite(v) || v < 0.0f) {
        throw DataError("NCG: frame " + std::to_string(t) + " holds a NaN, infinite, or negative rate");
      }
    }
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

Sequence read_sequence(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_sequence(bytes);
}

void write_sequence(const Sequence& seq, const std::filesystem::path& path) {
  const auto bytes = encode_sequence(seq);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<Sample> window(const Sequence& seq, const WindowConfig& cfg) {
  cfg.validate();
  std::vector<Sample> out;
  const std::size_t span = cfg.n_in + cfg.n_out;
  if (seq.size() < span) return out;
  const std::span<const GridFrame> frames(seq.frames);
  for (std::size_t s = 0; s + span <= seq.size(); s += cfg.stride) {
    out.push_back(Sample{frames.subspan(s, cfg.n_in), frames.subspan(s + cfg.n_in, cfg.n_out), s});
  }
  return out;
}

double transform(double rate) {
  if (!std::isfinite(rate) || rate < 0) throw DataError("transform: rate must be finite and nonnegative");
  return std::log1p(std::min(rate, kRateCap));
}

double inverse_transform(double y) { return std::max(0.0, std::expm1(y)); }

namespace {

void fill_frames(std::span<const GridFrame> frames, bool model, double* out) {
  for (const auto& f : frames) {
    for (float v : f.values) *out++ = model ? transform(v) : static_cast<double>(v);
  }
}

Tensor batch_of(std::span<const Sample> samples, bool inputs, bool model) {
  if (samples.empty()) throw DimensionError("batch: no samples");
  const auto& first = inputs ? samples.front().input : samples.front().target;
  const std::size_t T = first.size(), H = first.front().height, W = first.front().width;
  Tensor x({samples.size(), T, H, W, 1});
  for (std::size_t n = 0; n < samples.size(); ++n) {
    const auto& fr = inputs ? samples[n].input : samples[n].target;
    if (fr.size() != T || fr.front().height != H || fr.front().width != W) {
      throw DimensionError("batch: sample " + std::to_string(n) + " differs in shape from sample 0");
    }
    fill_frames(fr, model, x.data().data() + n * T * H * W);
  }
  return x;
}

}  // namespace

Tensor frames_to_tensor(std::span<const GridFrame> frames, bool to_model_space) {
  if (frames.empty()) throw DimensionError("frames_to_tensor: no frames");
  Tensor x({1, frames.size(), frames.front().height, frames.front().width, 1});
  fill_frames(frames, to_model_space, x.data().data());
  return x;
}

Tensor batch_inputs(std::span<const Sample> samples, bool to_model_space) {
  return batch_of(samples, true, to_model_space);
}

Tensor batch_targets(std::span<const Sample> samples, bool to_model_space) {
  return batch_of(samples, false, to_model_space);
}

std::vector<GridFrame> tensor_to_frames(const Tensor& x, std::size_t n, bool from_model_space, std::int64_t t0,
                                        std::int64_t dt) {
  if (x.rank() != 5 || x.dim(4) != 1) throw DimensionError("tensor_to_frames: expected [N,T,H,W,1]");
  const std::size_t T = x.dim(1), H = x.dim(2), W = x.dim(3);
  std::vector<GridFrame> out;
  for (std::size_t t = 0; t < T; ++t) {
    GridFrame f(H, W, t0 + static_cast<std::int64_t>(t) * dt);
    for (std::size_t i = 0; i < H * W; ++i) {
      const double v = x[((n * T + t) * H * W) + i];
      f.values[i] = static_cast<float>(from_model_space ? inverse_transform(v) : std::max(0.0, v));
    }
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace nowcast
