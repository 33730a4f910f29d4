#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nowcast/checkpoint.hpp"
#include "nowcast/forecaster.hpp"
#include "nowcast/grid.hpp"
#include "nowcast/rng.hpp"

namespace nowcast {

/// Per-pixel training rows pooled over samples: features are the n_in
/// model-space input values at one pixel, targets the n_out target values.
struct PixelRows {
  std::size_t n_features = 9;
  std::size_t n_targets = 3;
  std::vector<double> features;  // rows x n_features, row-major
  std::vector<double> targets;   // rows x n_targets

  std::size_t rows() const { return n_features == 0 ? 0 : features.size() / n_features; }
  const double* feature_row(std::size_t r) const { return features.data() + r * n_features; }
  const double* target_row(std::size_t r) const { return targets.data() + r * n_targets; }
};

/// Every pixel of every sample, or a seeded uniform subsample of
/// `max_rows` of them (without replacement) when max_rows is non-zero.
PixelRows pixel_rows(std::span<const Sample> samples, std::size_t max_rows = 0, std::uint64_t seed = 0);

/// Shared affine map per output step: y_t = intercept_t + w_t . x.
struct LinearModel {
  std::size_t n_in = 9;
  std::size_t n_out = 3;
  std::vector<double> weights;    // n_out x n_in
  std::vector<double> intercept;  // n_out

  double weight(std::size_t t, std::size_t f) const { return weights[t * n_in + f]; }
};

inline constexpr double kDefaultRidge = 1e-6;

/// Ridge normal equations per output step; the intercept is not penalized.
/// Throws NumericError for a singular system.
LinearModel lr_fit(const PixelRows& rows, double lambda = kDefaultRidge);
/// Same fit, streaming every pixel of every sample.
LinearModel lr_fit(std::span<const Sample> samples, double lambda = kDefaultRidge);
/// [N, n_in, H, W, 1] -> [N, n_out, H, W, 1] in model space.
Tensor lr_predict(const LinearModel& m, const Tensor& x);

class LinearRegression final : public Forecaster {
 public:
  explicit LinearRegression(LinearModel m) : m_(std::move(m)) {}

  std::string name() const override { return "LR"; }
  std::size_t n_in() const override { return m_.n_in; }
  std::size_t n_out() const override { return m_.n_out; }
  Tensor predict(const Tensor& x) override { return lr_predict(m_, x); }
  const LinearModel& model() const { return m_; }

 private:
  LinearModel m_;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0;
  std::int32_t left = -1;
  std::int32_t right = -1;
  std::size_t count = 0;
  std::vector<double> value;  // leaf mean, n_targets long

  bool is_leaf() const { return feature < 0; }
  bool operator==(const TreeNode&) const = default;
};

/// Nodes in creation order; node 0 is the root.
struct RegressionTree {
  std::vector<TreeNode> nodes;

  const std::vector<double>& leaf_for(const double* features) const;
  bool operator==(const RegressionTree&) const = default;
};

struct ForestConfig {
  std::size_t n_trees = 20;
  std::size_t max_depth = 8;
  std::size_t min_samples_leaf = 5;
  std::size_t max_features = 3;  // features tried per split
  std::size_t max_rows = 200000;  // pixel rows drawn for fitting; 0 keeps all
  std::uint64_t seed = 0;

  void validate() const;
};

struct ForestModel {
  std::size_t n_in = 9;
  std::size_t n_out = 3;
  ForestConfig config;
  std::vector<RegressionTree> trees;

  bool operator==(const ForestModel& o) const { return n_in == o.n_in && n_out == o.n_out && trees == o.trees; }
};

/// Bagged CART regression trees with a variance-reduction criterion on
/// the summed output variance. Deterministic per seed regardless of the
/// thread count.
ForestModel rf_fit(const PixelRows& rows, const ForestConfig& cfg);
ForestModel rf_fit(std::span<const Sample> samples, const ForestConfig& cfg);
/// Mean of the trees' leaf vectors at one feature row.
void rf_predict_row(const ForestModel& m, const double* features, double* out);
Tensor rf_predict(const ForestModel& m, const Tensor& x);

class RandomForest final : public Forecaster {
 public:
  explicit RandomForest(ForestModel m) : m_(std::move(m)) {}

  std::string name() const override { return "RF"; }
  std::size_t n_in() const override { return m_.n_in; }
  std::size_t n_out() const override { return m_.n_out; }
  Tensor predict(const Tensor& x) override { return rf_predict(m_, x); }
  const ForestModel& model() const { return m_; }

 private:
  ForestModel m_;
};

Checkpoint to_checkpoint(const LinearModel& m);
LinearModel linear_from_checkpoint(const Checkpoint& ckpt);
Checkpoint to_checkpoint(const ForestModel& m);
ForestModel forest_from_checkpoint(const Checkpoint& ckpt);

}  // namespace nowcast
