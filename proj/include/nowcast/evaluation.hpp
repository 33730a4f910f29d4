#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nowcast/forecaster.hpp"
#include "nowcast/grid.hpp"

namespace nowcast {

struct ContingencyTable {
  std::uint64_t hits = 0;
  std::uint64_t false_alarms = 0;
  std::uint64_t misses = 0;
  std::uint64_t correct_negatives = 0;

  std::uint64_t total() const { return hits + false_alarms + misses + correct_negatives; }
  ContingencyTable& operator+=(const ContingencyTable& o);
  bool operator==(const ContingencyTable&) const = default;
};

inline constexpr double kDefaultThreshold = 0.1;  // mm/h

/// Wet means value >= threshold.
ContingencyTable contingency(std::span<const double> pred, std::span<const double> obs, double threshold);

/// Each score is empty when its denominator is zero.
struct CategoricalScores {
  std::optional<double> pod;
  std::optional<double> far;
  std::optional<double> hss;
  std::optional<double> acc;
};

CategoricalScores categorical_scores(const ContingencyTable& t);

struct ContinuousScores {
  std::optional<double> mse;
  std::optional<double> bias;
  std::optional<double> r2;
  std::optional<double> cc;
};

/// Streaming co-moments of (est, obs) pairs, merged in a fixed order.
class PairMoments {
 public:
  void add(double est, double obs);
  void merge(const PairMoments& o);

  std::uint64_t count() const { return n_; }
  /// BIAS = sum(est) / sum(obs) and R^2 with the mean of obs; with
  /// `appendix_literal`, BIAS = sum(obs - est) / sum(obs) and R^2 with the
  /// mean of est in its denominator.
  ContinuousScores scores(bool appendix_literal = false) const;

 private:
  std::uint64_t n_ = 0;
  double mean_e_ = 0, mean_o_ = 0;
  double m2_e_ = 0, m2_o_ = 0, c_eo_ = 0;
  double sse_ = 0, sum_e_ = 0, sum_o_ = 0;
};

ContinuousScores continuous_scores(std::span<const double> pred, std::span<const double> obs,
                                   bool appendix_literal = false);

/// Runs `f` for `cycles` rounds, each on the latest n_in frames of the
/// original input followed by every prediction so far. Returns
/// [N, cycles * n_out, H, W, 1] in lead-time order.
Tensor feedback_forecast(Forecaster& f, const Tensor& x, std::size_t cycles);

struct EvalConfig {
  double threshold = kDefaultThreshold;
  std::size_t cycles = 1;
  std::size_t batch_size = 8;
  std::int64_t dt_seconds = kDefaultDtSeconds;
  bool appendix_literal = false;

  void validate() const;
};

struct LeadMetrics {
  std::int64_t lead_minutes = 0;
  ContinuousScores continuous;
  CategoricalScores categorical;
  ContingencyTable table;
  std::size_t n_samples = 0;
};

struct MetricReport {
  std::vector<LeadMetrics> pooled;                  // one row per lead
  std::vector<std::vector<LeadMetrics>> per_sample;  // [sample][lead]
  std::size_t skipped = 0;                           // samples whose targets are too short
  double model_space_mse = 0;                        // over the first n_out leads of evaluated samples

  /// lead_minutes,mse,bias,r2,cc,pod,far,hss,acc,n_samples
  std::string pooled_csv() const;
  /// sample,lead_minutes,mse,bias,r2,cc,pod,far,hss,acc,n_samples
  std::string per_sample_csv() const;
};

/// Scores `f` in physical units (mm/h) per lead time, pooling pixels for
/// the continuous scores and summing tables for the categorical ones.
/// Samples need at least cycles * n_out target frames; shorter ones are
/// skipped and counted.
MetricReport evaluate(Forecaster& f, std::span<const Sample> samples, const EvalConfig& cfg);

/// Binary PGM (P5), gray = round(255 * min(rate, 20) / 20).
inline constexpr double kPgmMaxRate = 20.0;
std::vector<std::uint8_t> encode_pgm(const GridFrame& frame);
void write_pgm(const GridFrame& frame, const std::filesystem::path& path);

}  // namespace nowcast
