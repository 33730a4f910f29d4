#include "nowcast/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Dense>

#include "nowcast/errors.hpp"
#include "nowcast/text.hpp"

namespace nowcast {

namespace {

std::size_t frame_pixels(const Sample& s) { return s.input.front().height * s.input.front().width; }

void check_samples(std::span<const Sample> samples) {
  if (samples.empty()) throw DataError("baseline fit: no samples");
  const std::size_t n_in = samples.front().input.size(), n_out = samples.front().target.size();
  const std::size_t px = frame_pixels(samples.front());
  for (const auto& s : samples) {
    if (s.input.size() != n_in || s.target.size() != n_out) {
      throw DimensionError("baseline fit: samples disagree on window length");
    }
    for (const auto* frames : {&s.input, &s.target}) {
      for (const auto& f : *frames) {
        if (f.values.size() != px) throw DimensionError("baseline fit: samples disagree on frame size");
      }
    }
  }
}

// Visits every pixel row of every sample in (sample, pixel) order.
template <typename Fn>
void for_each_pixel_row(std::span<const Sample> samples, Fn&& fn) {
  const std::size_t n_in = samples.front().input.size(), n_out = samples.front().target.size();
  std::vector<double> x(n_in), y(n_out);
  for (const auto& s : samples) {
    const std::size_t px = frame_pixels(s);
    for (std::size_t p = 0; p < px; ++p) {
      for (std::size_t f = 0; f < n_in; ++f) x[f] = transform(s.input[f].values[p]);
      for (std::size_t t = 0; t < n_out; ++t) y[t] = transform(s.target[t].values[p]);
      fn(x.data(), y.data());
    }
  }
}

// Normal equations of the affine least-squares problem, accumulated row by
// row. The last feature slot is the constant 1 of the intercept.
class NormalEquations {
 public:
  NormalEquations(std::size_t n_in, std::size_t n_out)
      : n_in_(n_in), n_out_(n_out), ata_(Eigen::MatrixXd::Zero(n_in + 1, n_in + 1)),
        aty_(Eigen::MatrixXd::Zero(n_in + 1, n_out)), z_(n_in + 1) {}

  void add(const double* x, const double* y) {
    for (std::size_t f = 0; f < n_in_; ++f) z_[static_cast<Eigen::Index>(f)] = x[f];
    z_[static_cast<Eigen::Index>(n_in_)] = 1.0;
    ata_.selfadjointView<Eigen::Lower>().rankUpdate(z_);
    for (std::size_t t = 0; t < n_out_; ++t) aty_.col(static_cast<Eigen::Index>(t)) += y[t] * z_;
    ++rows_;
  }

  LinearModel solve(double lambda) const {
    if (!(lambda >= 0) || !std::isfinite(lambda)) throw ConfigError("lr_fit: lambda must be a finite value >= 0");
    if (rows_ < 10) {
      throw DataError("lr_fit: needs at least 10 pixel rows, got " + std::to_string(rows_));
    }
    Eigen::MatrixXd a = ata_.selfadjointView<Eigen::Lower>();
    for (std::size_t f = 0; f < n_in_; ++f) a(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(f)) += lambda;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    if (qr.rank() < a.rows()) {
      throw NumericError("lr_fit: normal equations are singular (rank " + std::to_string(qr.rank()) + " of " +
                         std::to_string(a.rows()) + "); use a ridge lambda > 0");
    }
    const Eigen::MatrixXd coef = qr.solve(aty_);
    LinearModel m;
    m.n_in = n_in_;
    m.n_out = n_out_;
    m.weights.resize(n_in_ * n_out_);
    m.intercept.resize(n_out_);
    for (std::size_t t = 0; t < n_out_; ++t) {
      for (std::size_t f = 0; f < n_in_; ++f) {
        m.weights[t * n_in_ + f] = coef(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(t));
      }
      m.intercept[t] = coef(static_cast<Eigen::Index>(n_in_), static_cast<Eigen::Index>(t));
    }
    for (double v : m.weights) {
      if (!std::isfinite(v)) throw NumericError("lr_fit: non-finite coefficient");
    }
    return m;
  }

 private:
  std::size_t n_in_, n_out_;
  std::size_t rows_ = 0;
  Eigen::MatrixXd ata_, aty_;
  Eigen::VectorXd z_;
};

void check_predict_input(const Tensor& x, std::size_t n_in, const char* who) {
  if (x.rank() != 5 || x.dim(1) != n_in || x.dim(4) != 1) {
    throw DimensionError(std::string(who) + ": expected [N," + std::to_string(n_in) + ",H,W,1] input, got " +
                         shape_string(x.shape()));
  }
}

// Order-independent mean: sorts, then averages offsets from the minimum,
// so identical inputs give their common value exactly.
double stable_mean(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x - v.front();
  return std::min(v.front() + s / static_cast<double>(v.size()), v.back());
}

class TreeBuilder {
 public:
  TreeBuilder(const PixelRows& rows, const ForestConfig& cfg, Rng& rng) : rows_(rows), cfg_(cfg), rng_(rng) {}

  RegressionTree build(std::vector<std::uint32_t> idx) {
    RegressionTree tree;
    grow(tree, idx, 0);
    return tree;
  }

 private:
  struct Split {
    int feature = -1;
    double threshold = 0;
    double gain = 0;
  };

  std::int32_t grow(RegressionTree& tree, std::vector<std::uint32_t>& idx, std::size_t depth) {
    const auto id = static_cast<std::int32_t>(tree.nodes.size());
    tree.nodes.emplace_back();
    Split best;
    if (depth < cfg_.max_depth && idx.size() >= 2 * cfg_.min_samples_leaf) best = find_split(idx);
    if (best.feature < 0) {
      make_leaf(tree.nodes[static_cast<std::size_t>(id)], idx);
      return id;
    }
    std::vector<std::uint32_t> left, right;
    for (auto r : idx) {
      (rows_.feature_row(r)[best.feature] <= best.threshold ? left : right).push_back(r);
    }
    const std::size_t count = idx.size();
    idx.clear();
    idx.shrink_to_fit();
    const std::int32_t l = grow(tree, left, depth + 1);
    const std::int32_t r = grow(tree, right, depth + 1);
    auto& node = tree.nodes[static_cast<std::size_t>(id)];
    node.feature = best.feature;
    node.threshold = best.threshold;
    node.left = l;
    node.right = r;
    node.count = count;
    return id;
  }

  void make_leaf(TreeNode& node, const std::vector<std::uint32_t>& idx) {
    const std::size_t k = rows_.n_targets;
    node.count = idx.size();
    node.value.assign(k, 0.0);
    const double* y0 = rows_.target_row(idx.front());
    for (std::size_t t = 0; t < k; ++t) {
      double s = 0.0, lo = y0[t], hi = y0[t];
      for (auto r : idx) {
        const double y = rows_.target_row(r)[t];
        s += y - y0[t];
        lo = std::min(lo, y);
        hi = std::max(hi, y);
      }
      node.value[t] = std::clamp(y0[t] + s / static_cast<double>(idx.size()), lo, hi);
    }
  }

  Split find_split(const std::vector<std::uint32_t>& idx) {
    const std::size_t n = idx.size(), k = rows_.n_targets, nf = rows_.n_features;
    std::vector<std::size_t> features(nf);
    for (std::size_t f = 0; f < nf; ++f) features[f] = f;
    const std::size_t tries = std::min(cfg_.max_features, nf);
    for (std::size_t i = 0; i < tries; ++i) std::swap(features[i], features[i + rng_.index(nf - i)]);

    // Targets are centred on the first row so a constant node has exactly
    // zero gain.
    const double* y0 = rows_.target_row(idx.front());
    std::vector<double> total(k, 0.0);
    double sumsq = 0.0;
    for (auto r : idx) {
      for (std::size_t t = 0; t < k; ++t) {
        const double d = rows_.target_row(r)[t] - y0[t];
        total[t] += d;
        sumsq += d * d;
      }
    }
    double parent = 0.0;
    for (std::size_t t = 0; t < k; ++t) parent += total[t] * total[t] / static_cast<double>(n);

    Split best;
    std::vector<std::pair<double, std::uint32_t>> order(n);
    std::vector<double> left(k);
    for (std::size_t i = 0; i < tries; ++i) {
      const std::size_t f = features[i];
      for (std::size_t j = 0; j < n; ++j) order[j] = {rows_.feature_row(idx[j])[f], idx[j]};
      std::sort(order.begin(), order.end());
      std::fill(left.begin(), left.end(), 0.0);
      for (std::size_t j = 1; j < n; ++j) {
        const double* y = rows_.target_row(order[j - 1].second);
        for (std::size_t t = 0; t < k; ++t) left[t] += y[t] - y0[t];
        if (j < cfg_.min_samples_leaf || n - j < cfg_.min_samples_leaf) continue;
        if (!(order[j - 1].first < order[j].first)) continue;
        double score = 0.0;
        for (std::size_t t = 0; t < k; ++t) {
          const double right = total[t] - left[t];
          score += left[t] * left[t] / static_cast<double>(j) + right * right / static_cast<double>(n - j);
        }
        const double gain = score - parent;
        if (gain > best.gain && gain > 1e-12 * sumsq) {
          double mid = 0.5 * (order[j - 1].first + order[j].first);
          if (!(mid < order[j].first)) mid = order[j - 1].first;
          best = {static_cast<int>(f), mid, gain};
        }
      }
    }
    return best;
  }

  const PixelRows& rows_;
  const ForestConfig& cfg_;
  Rng& rng_;
};

}  // namespace

PixelRows pixel_rows(std::span<const Sample> samples, std::size_t max_rows, std::uint64_t seed) {
  check_samples(samples);
  PixelRows rows;
  rows.n_features = samples.front().input.size();
  rows.n_targets = samples.front().target.size();
  const std::size_t total = samples.size() * frame_pixels(samples.front());
  const std::size_t want = max_rows == 0 ? total : std::min(max_rows, total);
  rows.features.reserve(want * rows.n_features);
  rows.targets.reserve(want * rows.n_targets);
  // Selection sampling: keeps exactly `want` rows, in scan order.
  Rng rng(seed, 31);
  std::size_t seen = 0, kept = 0;
  for_each_pixel_row(samples, [&](const double* x, const double* y) {
    const std::size_t remaining = total - seen++;
    if (want < total && static_cast<double>(remaining) * rng.uniform() >= static_cast<double>(want - kept)) return;
    rows.features.insert(rows.features.end(), x, x + rows.n_features);
    rows.targets.insert(rows.targets.end(), y, y + rows.n_targets);
    ++kept;
  });
  return rows;
}

LinearModel lr_fit(const PixelRows& rows, double lambda) {
  NormalEquations ne(rows.n_features, rows.n_targets);
  for (std::size_t r = 0; r < rows.rows(); ++r) ne.add(rows.feature_row(r), rows.target_row(r));
  return ne.solve(lambda);
}

LinearModel lr_fit(std::span<const Sample> samples, double lambda) {
  check_samples(samples);
  NormalEquations ne(samples.front().input.size(), samples.front().target.size());
  for_each_pixel_row(samples, [&](const double* x, const double* y) { ne.add(x, y); });
  return ne.solve(lambda);
}

Tensor lr_predict(const LinearModel& m, const Tensor& x) {
  check_predict_input(x, m.n_in, "lr_predict");
  const std::size_t N = x.dim(0), P = x.dim(2) * x.dim(3);
  Tensor y({N, m.n_out, x.dim(2), x.dim(3), 1});
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t t = 0; t < m.n_out; ++t) {
      double* out = y.data().data() + (n * m.n_out + t) * P;
      std::fill(out, out + P, m.intercept[t]);
      for (std::size_t f = 0; f < m.n_in; ++f) {
        const double w = m.weight(t, f);
        const double* in = x.data().data() + (n * m.n_in + f) * P;
        for (std::size_t p = 0; p < P; ++p) out[p] += w * in[p];
      }
    }
  }
  return y;
}

const std::vector<double>& RegressionTree::leaf_for(const double* features) const {
  std::size_t i = 0;
  while (!nodes[i].is_leaf()) {
    const auto& n = nodes[i];
    i = static_cast<std::size_t>(features[n.feature] <= n.threshold ? n.left : n.right);
  }
  return nodes[i].value;
}

void ForestConfig::validate() const {
  if (n_trees == 0) throw ConfigError("forest: n_trees must be >= 1");
  if (min_samples_leaf == 0) throw ConfigError("forest: min_samples_leaf must be >= 1");
  if (max_features == 0) throw ConfigError("forest: max_features must be >= 1");
}

ForestModel rf_fit(const PixelRows& rows, const ForestConfig& cfg) {
  cfg.validate();
  const std::size_t R = rows.rows();
  if (R < cfg.min_samples_leaf || R == 0) {
    throw DataError("rf_fit: needs at least min_samples_leaf = " + std::to_string(cfg.min_samples_leaf) +
                    " rows, got " + std::to_string(R));
  }
  if (R > UINT32_MAX) throw DataError("rf_fit: too many rows");
  ForestModel m;
  m.n_in = rows.n_features;
  m.n_out = rows.n_targets;
  m.config = cfg;
  m.trees.resize(cfg.n_trees);
  Rng master(cfg.seed, 23);
  std::vector<Rng> streams;
  for (std::size_t t = 0; t < cfg.n_trees; ++t) streams.push_back(master.split());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t t = 0; t < static_cast<std::ptrdiff_t>(cfg.n_trees); ++t) {
    Rng& rng = streams[static_cast<std::size_t>(t)];
    std::vector<std::uint32_t> boot(R);
    for (auto& b : boot) b = static_cast<std::uint32_t>(rng.index(R));
    TreeBuilder builder(rows, cfg, rng);
    m.trees[static_cast<std::size_t>(t)] = builder.build(std::move(boot));
  }
  return m;
}

ForestModel rf_fit(std::span<const Sample> samples, const ForestConfig& cfg) {
  return rf_fit(pixel_rows(samples, cfg.max_rows, cfg.seed), cfg);
}

void rf_predict_row(const ForestModel& m, const double* features, double* out) {
  std::vector<double> v(m.trees.size());
  for (std::size_t k = 0; k < m.n_out; ++k) {
    for (std::size_t t = 0; t < m.trees.size(); ++t) v[t] = m.trees[t].leaf_for(features)[k];
    out[k] = stable_mean(v);
  }
}

Tensor rf_predict(const ForestModel& m, const Tensor& x) {
  check_predict_input(x, m.n_in, "rf_predict");
  if (m.trees.empty()) throw ConfigError("rf_predict: empty forest");
  const std::size_t N = x.dim(0), P = x.dim(2) * x.dim(3);
  Tensor y({N, m.n_out, x.dim(2), x.dim(3), 1});
  const auto total = static_cast<std::ptrdiff_t>(N * P);
#pragma omp parallel
  {
    std::vector<double> feat(m.n_in), out(m.n_out);
#pragma omp for schedule(static)
    for (std::ptrdiff_t i = 0; i < total; ++i) {
      const std::size_t n = static_cast<std::size_t>(i) / P, p = static_cast<std::size_t>(i) % P;
      for (std::size_t f = 0; f < m.n_in; ++f) feat[f] = x[(n * m.n_in + f) * P + p];
      rf_predict_row(m, feat.data(), out.data());
      for (std::size_t k = 0; k < m.n_out; ++k) y[(n * m.n_out + k) * P + p] = out[k];
    }
  }
  return y;
}

Checkpoint to_checkpoint(const LinearModel& m) {
  Checkpoint c;
  c.kind = "LR";
  c.config = "n_in=" + std::to_string(m.n_in) + "\nn_out=" + std::to_string(m.n_out) + "\n";
  c.entries.emplace_back("weights", Tensor({m.n_out, m.n_in}, m.weights));
  c.entries.emplace_back("intercept", Tensor({m.n_out}, m.intercept));
  return c;
}

LinearModel linear_from_checkpoint(const Checkpoint& c) {
  if (c.kind != "LR") throw FormatError("checkpoint kind " + c.kind + " is not LR");
  const auto kv = parse_key_values(c.config, "LR checkpoint");
  LinearModel m;
  m.n_in = key_size(kv, "n_in", "LR checkpoint");
  m.n_out = key_size(kv, "n_out", "LR checkpoint");
  const Tensor& w = c.at("weights");
  const Tensor& b = c.at("intercept");
  if (w.shape() != Shape{m.n_out, m.n_in} || b.shape() != Shape{m.n_out}) {
    throw FormatError("LR checkpoint: coefficient shapes disagree with n_in/n_out");
  }
  m.weights = w.storage();
  m.intercept = b.storage();
  return m;
}

Checkpoint to_checkpoint(const ForestModel& m) {
  Checkpoint c;
  c.kind = "RF";
  const auto& f = m.config;
  std::ostringstream os;
  os << "n_in=" << m.n_in << "\nn_out=" << m.n_out << "\nn_trees=" << m.trees.size() << "\nmax_depth=" << f.max_depth
     << "\nmin_samples_leaf=" << f.min_samples_leaf << "\nmax_features=" << f.max_features
     << "\nmax_rows=" << f.max_rows << "\nseed=" << f.seed << "\n";
  c.config = os.str();
  const std::size_t width = 5 + m.n_out;
  for (std::size_t t = 0; t < m.trees.size(); ++t) {
    const auto& nodes = m.trees[t].nodes;
    Tensor tab({nodes.size(), width});
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const auto& n = nodes[i];
      double* row = tab.data().data() + i * width;
      row[0] = n.feature;
      row[1] = n.threshold;
      row[2] = n.left;
      row[3] = n.right;
      row[4] = static_cast<double>(n.count);
      for (std::size_t k = 0; k < m.n_out; ++k) row[5 + k] = n.is_leaf() ? n.value[k] : 0.0;
    }
    c.entries.emplace_back("tree" + std::to_string(t), std::move(tab));
  }
  return c;
}

ForestModel forest_from_checkpoint(const Checkpoint& c) {
  if (c.kind != "RF") throw FormatError("checkpoint kind " + c.kind + " is not RF");
  const char* who = "RF checkpoint";
  const auto kv = parse_key_values(c.config, who);
  ForestModel m;
  m.n_in = key_size(kv, "n_in", who);
  m.n_out = key_size(kv, "n_out", who);
  m.config.n_trees = key_size(kv, "n_trees", who);
  m.config.max_depth = key_size(kv, "max_depth", who);
  m.config.min_samples_leaf = key_size(kv, "min_samples_leaf", who);
  m.config.max_features = key_size(kv, "max_features", who);
  m.config.max_rows = key_size(kv, "max_rows", who);
  m.config.seed = key_size(kv, "seed", who);
  const std::size_t width = 5 + m.n_out;
  for (std::size_t t = 0; t < m.config.n_trees; ++t) {
    const Tensor& tab = c.at("tree" + std::to_string(t));
    if (tab.rank() != 2 || tab.dim(1) != width || tab.dim(0) == 0) throw FormatError("RF checkpoint: bad tree table");
    RegressionTree tree;
    const std::size_t n_nodes = tab.dim(0);
    for (std::size_t i = 0; i < n_nodes; ++i) {
      const double* row = tab.data().data() + i * width;
      TreeNode n;
      n.feature = static_cast<int>(row[0]);
      n.threshold = row[1];
      n.left = static_cast<std::int32_t>(row[2]);
      n.right = static_cast<std::int32_t>(row[3]);
      n.count = static_cast<std::size_t>(row[4]);
      if (n.is_leaf()) {
        n.value.assign(row + 5, row + width);
      } else if (n.feature >= static_cast<int>(m.n_in) || n.left <= static_cast<std::int32_t>(i) ||
                 n.right <= static_cast<std::int32_t>(i) || n.left >= static_cast<std::int32_t>(n_nodes) ||
                 n.right >= static_cast<std::int32_t>(n_nodes)) {
        throw FormatError("RF checkpoint: tree " + std::to_string(t) + " node " + std::to_string(i) + " is malformed");
      }
      tree.nodes.push_back(std::move(n));
    }
    m.trees.push_back(std::move(tree));
  }
  return m;
}

}  // namespace nowcast
