#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "nowcast/tensor.hpp"

namespace nowcast {

/// One precipitation-rate raster in mm/h, row-major.
struct GridFrame {
  std::size_t height = 0;
  std::size_t width = 0;
  std::int64_t timestamp = 0;  // seconds since epoch
  std::vector<float> values;

  GridFrame() = default;
  GridFrame(std::size_t h, std::size_t w, std::int64_t ts = 0, float fill = 0.0f)
      : height(h), width(w), timestamp(ts), values(h * w, fill) {}

  float& operator()(std::size_t r, std::size_t c) { return values[r * width + c]; }
  float operator()(std::size_t r, std::size_t c) const { return values[r * width + c]; }

  bool operator==(const GridFrame&) const = default;
};

inline constexpr std::int64_t kDefaultDtSeconds = 1800;

/// Frames at a fixed cadence.
struct Sequence {
  std::vector<GridFrame> frames;
  std::int64_t dt_seconds = kDefaultDtSeconds;

  std::size_t size() const { return frames.size(); }
  std::size_t height() const { return frames.empty() ? 0 : frames.front().height; }
  std::size_t width() const { return frames.empty() ? 0 : frames.front().width; }

  /// Throws DataError / DimensionError on the first violated invariant.
  void validate() const;

  bool operator==(const Sequence&) const = default;
};

struct WindowConfig {
  std::size_t n_in = 9;
  std::size_t n_out = 3;
  std::size_t stride = 1;

  void validate() const;
};

/// Consecutive input/target frames viewed from a Sequence. The spans
/// borrow the sequence's storage and must not outlive it.
struct Sample {
  std::span<const GridFrame> input;
  std::span<const GridFrame> target;
  std::size_t start = 0;
};

/// Synthetic storm generator settings. Ranges are inclusive (min, max);
/// each cell draws its own value from every range.
struct SynthConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t n_frames = 24;
  std::size_t n_cells = 3;
  std::pair<double, double> intensity_range{2.0, 12.0};      // peak mm/h at t = 0
  std::pair<double, double> velocity_range{0.5, 2.0};        // speed, pixels/frame
  std::pair<double, double> heading_range{0.0, 6.283185307179586};  // radians, 0 = +x (columns)
  std::pair<double, double> growth_rate_range{-0.03, 0.03};  // per frame
  std::pair<double, double> sigma_range{3.0, 7.0};           // pixels, per principal axis
  std::pair<double, double> angular_rate_range{-0.05, 0.05}; // radians/frame
  double noise_std = 0.0;                                     // mm/h
  std::int64_t dt_seconds = kDefaultDtSeconds;
  std::int64_t start_time = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Parameters of one synthetic cell, exposed so tests can re-evaluate the
/// closed form independently of the rasterizer.
struct SynthCell {
  double row = 0, col = 0;  // centre at t = 0
  double v_row = 0, v_col = 0;
  double amplitude = 0;
  double growth = 0;
  double sigma_major = 1, sigma_minor = 1;
  double angle = 0;
  double angular_rate = 0;
};

std::vector<SynthCell> synth_cells(const SynthConfig& cfg);

/// Sum of advected, rotating, growing anisotropic Gaussians on a periodic
/// domain, plus clamped Gaussian noise. Pure function of cfg.
Sequence synthesize(const SynthConfig& cfg);

/// NCG container: "NCG1", u32 version = 1, u32 T, u32 H, u32 W,
/// u32 dt_seconds, then T*H*W little-endian float32 values (time-major,
/// row-major within a frame). Timestamps are not stored; frames read back
/// start at t = 0.
inline constexpr std::size_t kNcgHeaderBytes = 24;

Sequence read_sequence(const std::filesystem::path& path);
void write_sequence(const Sequence& seq, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_sequence(const Sequence& seq);
Sequence decode_sequence(std::span<const std::uint8_t> bytes);

/// Samples with start indices 0, stride, 2*stride, ...; empty when the
/// sequence is shorter than n_in + n_out.
std::vector<Sample> window(const Sequence& seq, const WindowConfig& cfg);

inline constexpr double kRateCap = 100.0;

/// ln(1 + min(x, 100)). Throws DataError for negative or non-finite x.
double transform(double rate);
/// max(0, exp(y) - 1).
double inverse_transform(double y);

/// Stacks frames into a [1, T, H, W, 1] tensor, optionally in model space.
Tensor frames_to_tensor(std::span<const GridFrame> frames, bool to_model_space = true);
/// Stacks the inputs (or targets) of several samples into [N, T, H, W, 1].
Tensor batch_inputs(std::span<const Sample> samples, bool to_model_space = true);
Tensor batch_targets(std::span<const Sample> samples, bool to_model_space = true);
/// Converts batch entry `n` of a [N, T, H, W, 1] tensor back to frames.
std::vector<GridFrame> tensor_to_frames(const Tensor& x, std::size_t n, bool from_model_space = true,
                                        std::int64_t t0 = 0, std::int64_t dt = kDefaultDtSeconds);

}  // namespace nowcast
