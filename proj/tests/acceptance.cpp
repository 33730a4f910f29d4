// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.
#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "nowcast/baselines.hpp"
#include "nowcast/checkpoint.hpp"
#include "nowcast/errors.hpp"
#include "nowcast/evaluation.hpp"
#include "nowcast/gradcheck.hpp"
#include "nowcast/models.hpp"
#include "nowcast/ops.hpp"
#include "nowcast/text.hpp"
#include "nowcast/training.hpp"

using namespace nowcast;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and budgets.
constexpr double kOpTol = 1e-5;
constexpr double kModelTol = 1e-4;
constexpr std::size_t kMinModelParams = 10;
constexpr double kGradcheckBudgetSeconds = 300;
constexpr double kAdjointTol = 1e-9;
constexpr int kAdjointInstances = 60;
constexpr int kContingencyTables = 1000;
constexpr int kContinuousVectors = 100;
constexpr double kContinuousTol = 1e-12;
constexpr double kLrCoefTol = 1e-6;
constexpr double kRfStepMse = 0.05;
constexpr double kSkillRatio = 0.9;
constexpr std::size_t kMaxEpochs = 30;
constexpr double kDeskBudgetSeconds = 3600;

// Desk-scale experiment sizing.
constexpr std::size_t kEvents = 240;
constexpr std::size_t kTrainEvents = 180;
constexpr std::size_t kEventFrames = 20;
constexpr std::size_t kGrid = 64;
constexpr std::size_t kDeskEpochs = 8;

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

Tensor random_tensor(const Shape& s, Rng& rng) {
  Tensor t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
  return t;
}

ModelConfig small_model(ModelKind kind, std::size_t hw, std::uint64_t seed) {
  ModelConfig mc;
  mc.kind = kind;
  mc.base_channels = 4;
  mc.hidden_channels = 4;
  mc.height = mc.width = hw;
  mc.seed = seed;
  return mc;
}

constexpr ModelKind kKinds[] = {ModelKind::CNC, ModelKind::CNC_R, ModelKind::CNC_D, ModelKind::RNC, ModelKind::RNC_R};

Verdict gradient_law() {
  const auto t0 = Clock::now();
  GradcheckConfig cfg;
  const auto entries = run_gradcheck(cfg);
  const double secs = seconds_since(t0);
  double worst_op = 0, worst_model = 0;
  bool ok = true;
  std::set<std::string> models;
  for (const auto& e : entries) {
    const bool is_model = e.target == "parameters";
    if (is_model) {
      worst_model = std::max(worst_model, e.max_rel_error);
      ok = ok && e.checked >= kMinModelParams && e.max_rel_error <= kModelTol;
      models.insert(e.family);
    } else {
      worst_op = std::max(worst_op, e.max_rel_error);
      ok = ok && e.checked > 0 && e.max_rel_error <= kOpTol;
    }
  }
  ok = ok && models.size() == 5 && secs <= kGradcheckBudgetSeconds;
  return {ok, std::to_string(entries.size()) + " checks, worst op " + num(worst_op) + ", worst model " +
                  num(worst_model) + " over " + std::to_string(models.size()) + " architectures, " + num(secs) + " s"};
}

Verdict adjoint_law() {
  Rng rng(2024);
  double worst = 0;
  int done = 0;
  while (done < kAdjointInstances) {
    ConvSpec spec;
    for (int a = 0; a < 3; ++a) {
      spec.kernel[a] = 1 + rng.index(3);
      spec.stride[a] = 1 + rng.index(2);
      spec.padding[a] = rng.index(spec.kernel[a]);
    }
    spec.in_channels = 1 + rng.index(3);
    spec.out_channels = 1 + rng.index(3);
    ConvSpec tspec = spec;
    std::swap(tspec.in_channels, tspec.out_channels);
    const Tensor w = random_tensor({spec.kernel[0], spec.kernel[1], spec.kernel[2], spec.in_channels,
                                    spec.out_channels},
                                   rng);
    const Tensor v = random_tensor({1 + rng.index(2), 1 + rng.index(4), 2 + rng.index(4), 2 + rng.index(4),
                                    spec.out_channels},
                                   rng);
    Tensor back;
    try {
      back = conv_transpose3d(v, w, tspec).first;
    } catch (const Error&) {
      continue;  // padding swallows the whole transposed extent
    }
    const Tensor x = random_tensor(back.shape(), rng);
    const Tensor y = conv3d(x, w, Tensor(), spec).first;
    if (y.shape() != v.shape()) return {false, "conv3d output does not match the transposed input shape"};
    const double rhs = dot(x, back);
    const double lhs = dot(y, v);
    worst = std::max(worst, std::abs(lhs - rhs) / std::max({std::abs(lhs), std::abs(rhs), 1e-300}));
    ++done;
  }
  return {worst <= kAdjointTol, std::to_string(done) + " instances, worst relative gap " + num(worst)};
}

Verdict metric_oracle() {
  Rng rng(77);
  std::size_t mismatches = 0;
  for (int k = 0; k < kContingencyTables; ++k) {
    const std::size_t n = 1 + rng.index(60);
    std::vector<double> p(n), o(n);
    std::uint64_t H = 0, F = 0, M = 0, Z = 0;
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = rng.uniform(0.0, 1.0);
      o[i] = rng.uniform(0.0, 1.0);
      const bool pw = p[i] >= 0.4, ow = o[i] >= 0.4;
      (pw && ow ? H : pw ? F : ow ? M : Z)++;
    }
    const ContingencyTable t = contingency(p, o, 0.4);
    const auto s = categorical_scores(t);
    const double Hd = static_cast<double>(H), Fd = static_cast<double>(F), Md = static_cast<double>(M),
                 Zd = static_cast<double>(Z);
    bool same = t == ContingencyTable{H, F, M, Z};
    same = same && (H + M == 0 ? !s.pod : (s.pod && *s.pod == Hd / (Hd + Md)));
    same = same && (H + F == 0 ? !s.far : (s.far && *s.far == Fd / (Hd + Fd)));
    same = same && s.acc && *s.acc == (Hd + Zd) / static_cast<double>(n);
    const double den = (Hd + Md) * (Md + Zd) + (Hd + Fd) * (Fd + Zd);
    same = same && (den == 0 ? !s.hss : (s.hss && *s.hss == 2.0 * (Hd * Zd - Fd * Md) / den));
    if (!same) ++mismatches;
  }
  double worst = 0;
  for (int k = 0; k < kContinuousVectors; ++k) {
    const std::size_t n = 2 + rng.index(500);
    std::vector<double> e(n), o(n);
    for (std::size_t i = 0; i < n; ++i) {
      o[i] = rng.uniform(0.0, 30.0);
      e[i] = std::max(0.0, o[i] + rng.normal(0.0, 4.0));
    }
    const auto s = continuous_scores(e, o);
    const double nn = static_cast<double>(n);
    double se = 0, sum_e = 0, sum_o = 0;
    for (std::size_t i = 0; i < n; ++i) {
      se += (o[i] - e[i]) * (o[i] - e[i]);
      sum_e += e[i];
      sum_o += o[i];
    }
    double cov = 0, ve = 0, vo = 0;
    for (std::size_t i = 0; i < n; ++i) {
      cov += (e[i] - sum_e / nn) * (o[i] - sum_o / nn);
      ve += (e[i] - sum_e / nn) * (e[i] - sum_e / nn);
      vo += (o[i] - sum_o / nn) * (o[i] - sum_o / nn);
    }
    const double expect[4] = {se / nn, sum_e / sum_o, 1.0 - se / vo, cov / std::sqrt(ve * vo)};
    const double got[4] = {*s.mse, *s.bias, *s.r2, *s.cc};
    for (int j = 0; j < 4; ++j) worst = std::max(worst, std::abs(got[j] - expect[j]) / std::max(std::abs(expect[j]), 1.0));
  }
  const auto w = categorical_scores({40, 20, 10, 30});
  const double table_gap = std::max({std::abs(*w.pod - 0.8), std::abs(*w.far - 1.0 / 3.0), std::abs(*w.acc - 0.7),
                                     std::abs(*w.hss - 0.4)});
  const bool ok = mismatches == 0 && worst <= kContinuousTol && table_gap <= 1e-15;
  return {ok, std::to_string(mismatches) + " categorical mismatches in " + std::to_string(kContingencyTables) +
                  " tables, continuous worst " + num(worst) + ", worked table gap " + num(table_gap)};
}

Verdict residual_identities() {
  Rng rng(5);
  bool ok = true;
  std::string detail;
  for (auto kind : {ModelKind::CNC_R, ModelKind::RNC_R}) {
    Model m(small_model(kind, 16, 9));
    m.zero_terminal_layers();
    Tensor x({2, 9, 16, 16, 1});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(0.0, 3.0);
    const bool same = m.predict(x) == bm_forecast(x);
    ok = ok && same;
    detail += to_string(kind) + (same ? " == BM; " : " != BM; ");
  }
  Model d(small_model(ModelKind::CNC_D, 16, 10));
  Tensor x({2, 9, 16, 16, 1});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(0.0, 3.0);
  ModelTape tape;
  const Tensor y = d.forward(x, Mode::Train, tape);
  std::size_t off = 0;
  for (std::size_t i = 0; i < y.size(); ++i) off += y[i] != 0.5 * (tape.branch_direct[i] + tape.branch_residual[i]);
  ok = ok && off == 0;
  detail += "CNC-D mean violations " + std::to_string(off);
  return {ok, detail};
}

Verdict feedback_mechanics() {
  Rng rng(6);
  Tensor x({2, 9, 16, 16, 1});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(0.0, 3.0);
  Persistence bm;
  const Tensor y = feedback_forecast(bm, x, 3);
  bool ok = y.dim(1) == 9;
  for (std::size_t t = 0; ok && t < 9; ++t) ok = slice_time(y, t, 1) == slice_time(x, 8, 1);
  const bool bm_ok = ok;

  // Short synthetic sequence shared by every forecaster.
  SynthConfig sc;
  sc.height = sc.width = 16;
  sc.n_frames = 20;
  sc.seed = 3;
  const Sequence seq = synthesize(sc);
  const auto samples = window(seq, {9, 9, 1});
  std::vector<std::unique_ptr<Forecaster>> fs;
  for (auto kind : kKinds) fs.push_back(std::make_unique<Model>(small_model(kind, 16, 1)));
  ForestConfig fc;
  fc.n_trees = 3;
  const auto short_windows = window(seq, {});
  fs.push_back(std::make_unique<LinearRegression>(lr_fit(short_windows)));
  fs.push_back(std::make_unique<RandomForest>(rf_fit(short_windows, fc)));
  fs.push_back(std::make_unique<Persistence>());
  std::size_t checked = 0;
  for (auto& f : fs) {
    for (std::size_t c = 1; c <= 3; ++c) {
      const Tensor out = feedback_forecast(*f, batch_inputs(samples), c);
      ok = ok && out.dim(1) == 3 * c && out.all_finite();
      EvalConfig ec;
      ec.cycles = c;
      const MetricReport r = evaluate(*f, samples, ec);
      ok = ok && r.pooled.size() == 3 * c;
      for (std::size_t k = 0; k < r.pooled.size(); ++k) ok = ok && r.pooled[k].lead_minutes == 30 * std::int64_t(k + 1);
      ++checked;
    }
  }
  return {ok, std::string("BM fixed point ") + (bm_ok ? "holds" : "fails") + "; " + std::to_string(checked) +
                  " forecaster/cycle pairs checked for 3c frames and 30..270 min labels"};
}

struct Curve {
  std::string name;
  std::vector<double> mse;  // physical-space MSE per lead
};

Verdict desk_scale() {
  const auto t0 = Clock::now();
  std::vector<Sequence> events;
  events.reserve(kEvents);
  for (std::size_t e = 0; e < kEvents; ++e) {
    SynthConfig sc;
    sc.height = sc.width = kGrid;
    sc.n_frames = kEventFrames;
    sc.seed = 5000 + e;
    events.push_back(synthesize(sc));
  }
  std::vector<Sample> train_set, test_set;
  for (std::size_t e = 0; e < kEvents; ++e) {
    for (const auto& s : window(events[e], {})) (e < kTrainEvents ? train_set : test_set).push_back(s);
  }
  const std::size_t total = train_set.size() + test_set.size();

  Model cnc(small_model(ModelKind::CNC_R, kGrid, 1));
  TrainConfig tc;
  tc.epochs = kDeskEpochs;
  tc.seed = 1;
  tc.val_fraction = 0.1;
  const auto t_train = Clock::now();
  const TrainResult tr = train(cnc, train_set, tc, {}, [&](const EpochRecord& r) {
    std::cerr << "  CNC-R epoch " << r.epoch << " train " << format_number(r.train_loss) << " val "
              << format_number(r.val_loss) << " (" << num(r.seconds) << " s)\n";
  });
  const double train_secs = seconds_since(t_train);
  LinearRegression lr(lr_fit(train_set));
  RandomForest rf(rf_fit(train_set, ForestConfig{}));
  Persistence bm;

  std::vector<Curve> curves;
  for (Forecaster* f : std::initializer_list<Forecaster*>{&bm, &lr, &rf, &cnc}) {
    const MetricReport r = evaluate(*f, test_set, EvalConfig{});
    Curve c{f->name(), {}};
    for (const auto& l : r.pooled) c.mse.push_back(*l.continuous.mse);
    std::cerr << "  " << c.name << " test MSE +30/+60/+90: " << num(c.mse[0]) << " / " << num(c.mse[1]) << " / "
              << num(c.mse[2]) << '\n';
    curves.push_back(c);
  }
  const double secs = seconds_since(t0);
  const Curve &b = curves[0], &l = curves[1], &f = curves[2], &n = curves[3];
  const bool skill = n.mse[2] <= kSkillRatio * b.mse[2];
  const bool beat30 = l.mse[0] < b.mse[0] && f.mse[0] < b.mse[0];
  auto monotone = [](const Curve& c) { return c.mse[0] <= c.mse[1] && c.mse[1] <= c.mse[2]; };
  auto growth = [](const Curve& c) { return c.mse[2] / c.mse[0]; };
  const bool degrade = monotone(b) && monotone(l) && monotone(f) && growth(l) > growth(b) && growth(f) > growth(b);
  const bool budget = secs <= kDeskBudgetSeconds && tr.history.epochs.size() <= kMaxEpochs;
  const bool ok = total >= 2000 && skill && beat30 && degrade && budget;
  std::ostringstream d;
  d << total << " samples (" << test_set.size() << " held out); CNC-R/BM at +90 = " << num(n.mse[2] / b.mse[2])
    << " (need <= " << kSkillRatio << "); LR/BM, RF/BM at +30 = " << num(l.mse[0] / b.mse[0]) << ", "
    << num(f.mse[0] / b.mse[0]) << "; +90/+30 growth BM " << num(growth(b)) << ", LR " << num(growth(l)) << ", RF "
    << num(growth(f)) << "; " << tr.history.epochs.size() << " epochs, train " << num(train_secs) << " s, total "
    << num(secs) << " s on " << omp_get_max_threads() << " thread(s)";
  return {ok, d.str()};
}

Verdict baseline_exactness() {
  Rng rng(8);
  PixelRows rows;
  const std::size_t n = 3000;
  rows.features.resize(n * 9);
  rows.targets.resize(n * 3);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t f = 0; f < 9; ++f) rows.features[r * 9 + f] = rng.uniform(0.0, 3.0);
    for (std::size_t t = 0; t < 3; ++t) {
      double y = 0.2 * t - 0.1;
      for (std::size_t f = 0; f < 9; ++f) y += (0.05 * f + 0.1 * t - 0.2) * rows.features[r * 9 + f];
      rows.targets[r * 3 + t] = y;
    }
  }
  const LinearModel lm = lr_fit(rows, 1e-12);
  double coef = 0;
  for (std::size_t t = 0; t < 3; ++t) {
    coef = std::max(coef, std::abs(lm.intercept[t] - (0.2 * t - 0.1)));
    for (std::size_t f = 0; f < 9; ++f) coef = std::max(coef, std::abs(lm.weight(t, f) - (0.05 * f + 0.1 * t - 0.2)));
  }
  PixelRows step;
  const std::size_t m = 10000;
  step.features.resize(m * 9);
  step.targets.resize(m * 3);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t f = 0; f < 9; ++f) step.features[r * 9 + f] = rng.uniform(0.0, 2.0);
    for (std::size_t t = 0; t < 3; ++t) step.targets[r * 3 + t] = step.features[r * 9 + 8] > 1.0 ? 5.0 : 0.0;
  }
  ForestConfig fc;
  fc.n_trees = 20;
  fc.max_depth = 3;
  fc.max_rows = 0;
  fc.max_features = 9;
  fc.seed = 4;
  const ForestModel a = rf_fit(step, fc), b = rf_fit(step, fc);
  const bool same = a == b && encode_checkpoint(to_checkpoint(a)) == encode_checkpoint(to_checkpoint(b));
  double se = 0;
  std::vector<double> out(3);
  for (std::size_t r = 0; r < m; ++r) {
    rf_predict_row(a, step.feature_row(r), out.data());
    for (std::size_t t = 0; t < 3; ++t) se += (out[t] - step.targets[r * 3 + t]) * (out[t] - step.targets[r * 3 + t]);
  }
  const double mse = se / static_cast<double>(3 * m);
  ForestConfig subset = fc;
  subset.max_features = ForestConfig{}.max_features;
  const ForestModel c = rf_fit(step, subset);
  double se_subset = 0;
  for (std::size_t r = 0; r < m; ++r) {
    rf_predict_row(c, step.feature_row(r), out.data());
    for (std::size_t t = 0; t < 3; ++t) {
      se_subset += (out[t] - step.targets[r * 3 + t]) * (out[t] - step.targets[r * 3 + t]);
    }
  }
  const bool ok = coef <= kLrCoefTol && same && mse < kRfStepMse;
  return {ok, "LR coefficient error " + num(coef) + ", RF " + (same ? "bit-identical" : "differs") +
                  " across runs, step-rule train MSE " + num(mse) + " (all 9 features per split; " +
                  num(se_subset / static_cast<double>(3 * m)) + " with the default 3)"};
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string drop_seconds(const std::string& csv) {
  std::istringstream is(csv);
  std::string out;
  for (std::string line; std::getline(is, line);) {
    std::vector<std::string> f;
    std::istringstream ls(line);
    for (std::string x; std::getline(ls, x, ',');) f.push_back(x);
    if (f.size() == 5) f.erase(f.begin() + 3);
    for (const auto& x : f) out += x + ',';
    out += '\n';
  }
  return out;
}

Verdict reproducibility() {
  const int saved_threads = omp_get_max_threads();
  std::vector<std::string> artefacts[2];
  std::string history[2];
  bool ran = true;
  for (int run = 0; run < 2; ++run) {
    const fs::path dir = fs::temp_directory_path() / ("nowcast_accept_repro_" + std::to_string(run));
    fs::remove_all(dir);
    fs::create_directories(dir);
    auto p = [&](const char* name) { return (dir / name).string(); };
    const std::vector<std::vector<std::string>> cmds = {
        {"--threads", "1", "synth", "--h", "16", "--w", "16", "--frames", "30", "--seed", "11", "--out", p("d.ncg")},
        {"--threads", "1", "train", "--model", "rnc-r", "--data", p("d.ncg"), "--out", p("m.ncp"), "--epochs", "2",
         "--base", "4", "--hidden", "4", "--seed", "3"},
        {"--threads", "1", "train", "--model", "rf", "--data", p("d.ncg"), "--out", p("rf.ncp"), "--trees", "4"},
        {"--threads", "1", "evaluate", "--checkpoint", p("m.ncp"), "--data", p("d.ncg"), "--out", p("m.csv"),
         "--feedback-cycles", "2"},
    };
    for (const auto& c : cmds) ran = ran && nowcast::cli::run(c) == nowcast::cli::kOk;
    for (const char* f : {"d.ncg", "m.ncp", "rf.ncp", "m.csv", "m.csv.per_sample.csv"}) artefacts[run].push_back(read_file(dir / f));
    history[run] = drop_seconds(read_file(dir / "m.ncp.history.csv"));
    fs::remove_all(dir);
  }
  omp_set_num_threads(saved_threads);
  const bool same = artefacts[0] == artefacts[1] && history[0] == history[1] && !history[0].empty();
  return {ran && same, std::string(ran ? "commands succeeded" : "a command failed") +
                           "; NCG, checkpoints and metric CSVs " + (artefacts[0] == artefacts[1] ? "identical" : "differ") +
                           "; histories (seconds column aside) " + (history[0] == history[1] ? "identical" : "differ")};
}

Verdict format_fidelity() {
  SynthConfig sc;
  sc.height = 12;
  sc.width = 10;
  sc.n_frames = 5;
  sc.noise_std = 0.5;
  const Sequence seq = synthesize(sc);
  const auto ncg = encode_sequence(seq);
  const Sequence back = decode_sequence(ncg);
  const bool ncg_ok = ncg.size() == kNcgHeaderBytes + 4 * 5 * 12 * 10 && encode_sequence(back) == ncg &&
                      back.frames.size() == 5 && back.frames[3].values == seq.frames[3].values;
  Model m(small_model(ModelKind::RNC, 16, 2));
  const auto ncp = encode_checkpoint(to_checkpoint(m));
  const Checkpoint c = decode_checkpoint(ncp);
  auto restored = model_from_checkpoint(c);
  const bool ncp_ok = encode_checkpoint(c) == ncp && encode_checkpoint(to_checkpoint(*restored)) == ncp;
  GridFrame f(2, 4);
  f.values = {0.0f, 5.0f, 10.0f, 19.9f, 20.0f, 35.0f, 0.02f, 7.3f};
  const auto pgm = encode_pgm(f);
  const std::string header = "P5\n4 2\n255\n";
  bool pgm_ok = pgm.size() == header.size() + 8 && std::equal(header.begin(), header.end(), pgm.begin());
  for (std::size_t i = 0; pgm_ok && i < 8; ++i) {
    const long expect = std::lround(255.0 * std::min(static_cast<double>(f.values[i]), 20.0) / 20.0);
    pgm_ok = pgm[header.size() + i] == expect;
  }
  return {ncg_ok && ncp_ok && pgm_ok, std::string("NCG ") + (ncg_ok ? "ok" : "bad") + ", NCP1 " +
                                          (ncp_ok ? "ok" : "bad") + ", PGM " + (pgm_ok ? "ok" : "bad")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"gradient law", gradient_law},
      {"adjoint law", adjoint_law},
      {"metric oracle", metric_oracle},
      {"residual identities", residual_identities},
      {"feedback mechanics", feedback_mechanics},
      {"desk-scale skill ordering", desk_scale},
      {"baseline exactness", baseline_exactness},
      {"reproducibility", reproducibility},
      {"format fidelity", format_fidelity},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k + 1);
    if (!wanted.empty() && !wanted.count(id)) continue;
    Verdict v;
    try {
      v = criteria[k].second();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failed += !v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[k].first << "): " << v.detail
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
