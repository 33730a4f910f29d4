#pragma once

#include <cstdint>
#include <random>

namespace nowcast {

/// Deterministic, splittable random stream.
///
/// A stream is identified by (seed, stream id); `split()` derives an
/// independent child stream and advances a counter, so the sequence of
/// children is itself reproducible.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1).
  double uniform();
  /// Uniform on [lo, hi]; returns lo when lo == hi.
  double uniform(double lo, double hi);
  double normal(double mean = 0.0, double stddev = 1.0);
  /// Uniform integer on [0, n).
  std::size_t index(std::size_t n);

  Rng split();

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

}  // namespace nowcast
