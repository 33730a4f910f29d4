#include "nowcast/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "nowcast/errors.hpp"
#include "nowcast/text.hpp"

namespace nowcast {

ContingencyTable& ContingencyTable::operator+=(const ContingencyTable& o) {
  hits += o.hits;
  false_alarms += o.false_alarms;
  misses += o.misses;
  correct_negatives += o.correct_negatives;
  return *this;
}

ContingencyTable contingency(std::span<const double> pred, std::span<const double> obs, double threshold) {
  if (pred.size() != obs.size()) {
    throw DimensionError("contingency: " + std::to_string(pred.size()) + " predictions vs " +
                         std::to_string(obs.size()) + " observations");
  }
  if (!(threshold > 0)) throw ConfigError("contingency: threshold must be positive");
  ContingencyTable t;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] >= threshold, o = obs[i] >= threshold;
    if (p && o) ++t.hits;
    else if (p) ++t.false_alarms;
    else if (o) ++t.misses;
    else ++t.correct_negatives;
  }
  return t;
}

CategoricalScores categorical_scores(const ContingencyTable& t) {
  const auto H = static_cast<double>(t.hits), F = static_cast<double>(t.false_alarms);
  const auto M = static_cast<double>(t.misses), Z = static_cast<double>(t.correct_negatives);
  CategoricalScores s;
  if (t.hits + t.misses > 0) s.pod = H / (H + M);
  if (t.hits + t.false_alarms > 0) s.far = F / (H + F);
  const double hss_den = (H + M) * (M + Z) + (H + F) * (F + Z);
  if (hss_den > 0) s.hss = 2.0 * (H * Z - F * M) / hss_den;
  if (t.total() > 0) s.acc = (H + Z) / static_cast<double>(t.total());
  return s;
}

void PairMoments::add(double est, double obs) {
  ++n_;
  const double n = static_cast<double>(n_);
  const double de = est - mean_e_, dobs = obs - mean_o_;
  mean_e_ += de / n;
  mean_o_ += dobs / n;
  m2_e_ += de * (est - mean_e_);
  m2_o_ += dobs * (obs - mean_o_);
  c_eo_ += de * (obs - mean_o_);
  const double err = obs - est;
  sse_ += err * err;
  sum_e_ += est;
  sum_o_ += obs;
}

void PairMoments::merge(const PairMoments& o) {
  if (o.n_ == 0) return;
  if (n_ == 0) {
    *this = o;
    return;
  }
  const double na = static_cast<double>(n_), nb = static_cast<double>(o.n_), n = na + nb;
  const double de = o.mean_e_ - mean_e_, dobs = o.mean_o_ - mean_o_;
  mean_e_ += de * nb / n;
  mean_o_ += dobs * nb / n;
  m2_e_ += o.m2_e_ + de * de * na * nb / n;
  m2_o_ += o.m2_o_ + dobs * dobs * na * nb / n;
  c_eo_ += o.c_eo_ + de * dobs * na * nb / n;
  sse_ += o.sse_;
  sum_e_ += o.sum_e_;
  sum_o_ += o.sum_o_;
  n_ += o.n_;
}

ContinuousScores PairMoments::scores(bool appendix_literal) const {
  ContinuousScores s;
  if (n_ == 0) return s;
  const double n = static_cast<double>(n_);
  s.mse = sse_ / n;
  if (sum_o_ != 0) s.bias = appendix_literal ? (sum_o_ - sum_e_) / sum_o_ : sum_e_ / sum_o_;
  if (m2_o_ > 0 && m2_e_ > 0) s.cc = std::clamp(c_eo_ / std::sqrt(m2_e_ * m2_o_), -1.0, 1.0);
  if (appendix_literal) {
    const double d = mean_o_ - mean_e_;
    const double den = m2_o_ + n * d * d;
    if (den > 0) s.r2 = 1.0 - sse_ / den;
  } else if (m2_o_ > 0) {
    s.r2 = 1.0 - sse_ / m2_o_;
  }
  return s;
}

ContinuousScores continuous_scores(std::span<const double> pred, std::span<const double> obs, bool appendix_literal) {
  if (pred.size() != obs.size()) {
    throw DimensionError("continuous_scores: " + std::to_string(pred.size()) + " predictions vs " +
                         std::to_string(obs.size()) + " observations");
  }
  if (pred.size() < 2) throw DimensionError("continuous_scores: needs at least 2 pairs");
  PairMoments m;
  for (std::size_t i = 0; i < pred.size(); ++i) m.add(pred[i], obs[i]);
  return m.scores(appendix_literal);
}

Tensor feedback_forecast(Forecaster& f, const Tensor& x, std::size_t cycles) {
  if (cycles == 0) throw ConfigError("feedback: cycles must be >= 1");
  const std::size_t n_in = f.n_in(), n_out = f.n_out();
  if (x.rank() != 5 || x.dim(1) != n_in || x.dim(4) != 1) {
    throw ContractError(f.name() + ": feedback input must be [N," + std::to_string(n_in) + ",H,W,1], got " +
                        shape_string(x.shape()));
  }
  const Shape expected{x.dim(0), n_out, x.dim(2), x.dim(3), 1};
  std::vector<Tensor> frames{x};
  std::vector<Tensor> preds;
  Tensor window = x;
  for (std::size_t c = 0; c < cycles; ++c) {
    Tensor y = f.predict(window);
    if (y.shape() != expected) {
      throw ContractError(f.name() + ": cycle " + std::to_string(c + 1) + " produced " + shape_string(y.shape()) +
                          ", expected " + shape_string(expected));
    }
    preds.push_back(y);
    frames.push_back(std::move(y));
    const Tensor all = concat_time(frames);
    window = slice_time(all, all.dim(1) - n_in, n_in);
    frames = {window};
  }
  return concat_time(preds);
}

void EvalConfig::validate() const {
  if (!(threshold > 0)) throw ConfigError("evaluate: threshold must be positive");
  if (cycles == 0) throw ConfigError("evaluate: cycles must be >= 1");
  if (batch_size == 0) throw ConfigError("evaluate: batch size must be >= 1");
  if (dt_seconds <= 0) throw ConfigError("evaluate: dt must be positive");
}

MetricReport evaluate(Forecaster& f, std::span<const Sample> samples, const EvalConfig& cfg) {
  cfg.validate();
  const std::size_t leads = cfg.cycles * f.n_out();
  std::vector<Sample> usable;
  MetricReport report;
  for (const auto& s : samples) {
    if (s.input.size() != f.n_in()) {
      throw ContractError(f.name() + ": sample holds " + std::to_string(s.input.size()) + " input frames, needs " +
                          std::to_string(f.n_in()));
    }
    if (s.target.size() < leads) {
      ++report.skipped;
      continue;
    }
    usable.push_back(Sample{s.input, s.target.first(leads), s.start});
  }
  if (usable.empty()) {
    throw DataError("evaluate: no sample has the " + std::to_string(leads) + " target frames needed (" +
                    std::to_string(report.skipped) + " skipped)");
  }
  std::vector<PairMoments> pooled(leads);
  report.pooled.resize(leads);
  for (std::size_t l = 0; l < leads; ++l) {
    report.pooled[l].lead_minutes = static_cast<std::int64_t>(l + 1) * cfg.dt_seconds / 60;
  }
  double model_sse = 0.0;
  std::size_t model_count = 0;
  const std::span<const Sample> all(usable);
  for (std::size_t b = 0; b < all.size(); b += cfg.batch_size) {
    const auto chunk = all.subspan(b, std::min(cfg.batch_size, all.size() - b));
    const Tensor pred = feedback_forecast(f, batch_inputs(chunk), cfg.cycles);
    const std::size_t P = pred.dim(2) * pred.dim(3);
    std::vector<double> est(P), obs(P);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      std::vector<LeadMetrics> rows(leads);
      for (std::size_t l = 0; l < leads; ++l) {
        const auto& target = chunk[i].target[l];
        if (target.values.size() != P) throw DimensionError("evaluate: target frame size differs from the input");
        const double* p = pred.data().data() + (i * leads + l) * P;
        PairMoments m;
        for (std::size_t k = 0; k < P; ++k) {
          est[k] = inverse_transform(p[k]);
          obs[k] = target.values[k];
          m.add(est[k], obs[k]);
          if (l < f.n_out()) {
            const double d = p[k] - transform(obs[k]);
            model_sse += d * d;
          }
        }
        if (l < f.n_out()) model_count += P;
        auto& row = rows[l];
        row.lead_minutes = report.pooled[l].lead_minutes;
        row.table = contingency(est, obs, cfg.threshold);
        row.categorical = categorical_scores(row.table);
        row.continuous = m.scores(cfg.appendix_literal);
        row.n_samples = 1;
        pooled[l].merge(m);
        report.pooled[l].table += row.table;
        ++report.pooled[l].n_samples;
      }
      report.per_sample.push_back(std::move(rows));
    }
  }
  for (std::size_t l = 0; l < leads; ++l) {
    report.pooled[l].continuous = pooled[l].scores(cfg.appendix_literal);
    report.pooled[l].categorical = categorical_scores(report.pooled[l].table);
  }
  report.model_space_mse = model_sse / static_cast<double>(model_count);
  return report;
}

namespace {

void metric_fields(std::ostringstream& os, const LeadMetrics& m) {
  os << m.lead_minutes << ',' << format_optional(m.continuous.mse) << ',' << format_optional(m.continuous.bias) << ','
     << format_optional(m.continuous.r2) << ',' << format_optional(m.continuous.cc) << ','
     << format_optional(m.categorical.pod) << ',' << format_optional(m.categorical.far) << ','
     << format_optional(m.categorical.hss) << ',' << format_optional(m.categorical.acc) << ',' << m.n_samples;
}

}  // namespace

std::string MetricReport::pooled_csv() const {
  std::ostringstream os;
  os << "lead_minutes,mse,bias,r2,cc,pod,far,hss,acc,n_samples\n";
  for (const auto& m : pooled) {
    metric_fields(os, m);
    os << '\n';
  }
  return os.str();
}

std::string MetricReport::per_sample_csv() const {
  std::ostringstream os;
  os << "sample,lead_minutes,mse,bias,r2,cc,pod,far,hss,acc,n_samples\n";
  for (std::size_t s = 0; s < per_sample.size(); ++s) {
    for (const auto& m : per_sample[s]) {
      os << s << ',';
      metric_fields(os, m);
      os << '\n';
    }
  }
  return os.str();
}

std::vector<std::uint8_t> encode_pgm(const GridFrame& frame) {
  if (frame.values.size() != frame.height * frame.width || frame.values.empty()) {
    throw DimensionError("pgm: frame is empty or its size disagrees with its shape");
  }
  const std::string header = "P5\n" + std::to_string(frame.width) + " " + std::to_string(frame.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + frame.values.size());
  for (float v : frame.values) {
    if (std::isnan(v)) throw DataError("pgm: NaN rate");
    const double r = std::clamp(static_cast<double>(v), 0.0, kPgmMaxRate);
    out.push_back(static_cast<std::uint8_t>(std::lround(255.0 * r / kPgmMaxRate)));
  }
  return out;
}

void write_pgm(const GridFrame& frame, const std::filesystem::path& path) {
  const auto bytes = encode_pgm(frame);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace nowcast
