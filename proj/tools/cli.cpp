#include "cli.hpp"

#include <omp.h>

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "manifest.hpp"
#include "nowcast/baselines.hpp"
#include "nowcast/checkpoint.hpp"
#include "nowcast/errors.hpp"
#include "nowcast/evaluation.hpp"
#include "nowcast/gradcheck.hpp"
#include "nowcast/grid.hpp"
#include "nowcast/models.hpp"
#include "nowcast/text.hpp"
#include "nowcast/training.hpp"

namespace nowcast::cli {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

fs::path manifest_path(const fs::path& out) { return fs::path(out.string() + ".manifest"); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

struct GradcheckFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Sequences own the frames that samples borrow, so they load first and
// never move afterwards.
struct Dataset {
  std::vector<Sequence> sequences;
  std::vector<Sample> samples;
};

void load_dataset(Dataset& d, const std::vector<std::string>& paths, const WindowConfig& wc, RunManifest& m) {
  d.sequences.reserve(paths.size());
  for (const auto& p : paths) {
    d.sequences.push_back(read_sequence(p));
    m.input(p);
  }
  std::size_t longest = 0;
  for (const auto& s : d.sequences) {
    longest = std::max(longest, s.size());
    const auto w = window(s, wc);
    d.samples.insert(d.samples.end(), w.begin(), w.end());
  }
  if (d.samples.empty()) {
    throw DataError("need " + std::to_string(wc.n_in + wc.n_out) + " frames per sequence (" +
                    std::to_string(wc.n_in) + " inputs + " + std::to_string(wc.n_out) +
                    " targets); the longest input has " + std::to_string(longest) + ", a shortfall of " +
                    std::to_string(wc.n_in + wc.n_out - longest));
  }
}

std::vector<Sample> subset(const std::vector<Sample>& all, const std::string& which, double val_fraction,
                           std::uint64_t seed) {
  if (which == "all") return all;
  const auto [tr, val] = split_indices(all.size(), val_fraction, seed);
  const auto& idx = which == "train" ? tr : val;
  std::vector<Sample> out;
  for (auto i : idx) out.push_back(all[i]);
  if (out.empty()) throw DataError("the " + which + " subset is empty");
  return out;
}

// ---- synth ----

struct SynthArgs {
  SynthConfig cfg;
  double intensity_min = 2, intensity_max = 12;
  double speed_min = 0.5, speed_max = 2;
  std::string out;
};

void add_synth(CLI::App& app, SynthArgs& a) {
  auto* c = app.add_subcommand("synth", "Write a synthetic storm sequence as NCG");
  c->set_help_flag("--help", "Print this help message and exit");
  c->add_option("--h", a.cfg.height, "Rows")->capture_default_str();
  c->add_option("--w", a.cfg.width, "Columns")->capture_default_str();
  c->add_option("--frames", a.cfg.n_frames, "Frame count")->capture_default_str();
  c->add_option("--cells", a.cfg.n_cells, "Storm cells")->capture_default_str();
  c->add_option("--noise", a.cfg.noise_std, "Gaussian noise std in mm/h")->capture_default_str();
  c->add_option("--intensity-min", a.intensity_min, "Smallest peak rate")->capture_default_str();
  c->add_option("--intensity-max", a.intensity_max, "Largest peak rate")->capture_default_str();
  c->add_option("--speed-min", a.speed_min, "Slowest drift, pixels/frame")->capture_default_str();
  c->add_option("--speed-max", a.speed_max, "Fastest drift, pixels/frame")->capture_default_str();
  c->add_option("--dt", a.cfg.dt_seconds, "Seconds between frames")->capture_default_str();
  c->add_option("--seed", a.cfg.seed, "Random seed")->capture_default_str();
  c->add_option("--out", a.out, "Output NCG path")->required();
}

void cmd_synth(SynthArgs& a) {
  const auto t0 = Clock::now();
  a.cfg.intensity_range = {a.intensity_min, a.intensity_max};
  a.cfg.velocity_range = {a.speed_min, a.speed_max};
  write_sequence(synthesize(a.cfg), a.out);
  RunManifest m("synth");
  m.set("h", std::to_string(a.cfg.height));
  m.set("w", std::to_string(a.cfg.width));
  m.set("frames", std::to_string(a.cfg.n_frames));
  m.set("cells", std::to_string(a.cfg.n_cells));
  m.set("noise", format_number(a.cfg.noise_std));
  m.set("intensity", format_number(a.intensity_min) + ".." + format_number(a.intensity_max));
  m.set("speed", format_number(a.speed_min) + ".." + format_number(a.speed_max));
  m.set("dt", std::to_string(a.cfg.dt_seconds));
  m.set("seed", std::to_string(a.cfg.seed));
  m.output(a.out);
  m.write(manifest_path(a.out), seconds_since(t0));
  std::cout << "wrote " << a.out << " (" << a.cfg.n_frames << " frames, sha256 " << sha256_file(a.out) << ")\n";
}

// ---- train ----

struct TrainArgs {
  std::string model;
  std::vector<std::string> data;
  std::string out;
  std::string history;
  ModelConfig mc;
  TrainConfig tc;
  AdamHyper adam;
  std::size_t stride = 1;
  double ridge = kDefaultRidge;
  ForestConfig forest;
};

void add_window_options(CLI::App* c, std::size_t& n_in, std::size_t& n_out, std::size_t& stride) {
  c->add_option("--n-in", n_in, "Input frames")->capture_default_str();
  c->add_option("--n-out", n_out, "Predicted frames per cycle")->capture_default_str();
  c->add_option("--stride", stride, "Window start spacing")->capture_default_str();
}

void add_train(CLI::App& app, TrainArgs& a) {
  auto* c = app.add_subcommand("train", "Train a network or fit a baseline");
  c->add_option("--model", a.model, "cnc | cnc-r | cnc-d | rnc | rnc-r | lr | rf")->required();
  c->add_option("--data", a.data, "Input NCG files")->required();
  c->add_option("--out", a.out, "Output NCP1 checkpoint")->required();
  c->add_option("--history", a.history, "History CSV (default: <out>.history.csv)");
  add_window_options(c, a.mc.n_in, a.mc.n_out, a.stride);
  c->add_option("--lr", a.adam.lr, "Adam learning rate")->capture_default_str();
  c->add_option("--batch", a.tc.batch_size, "Batch size")->capture_default_str();
  c->add_option("--epochs", a.tc.epochs, "Epochs")->capture_default_str();
  c->add_option("--val-fraction", a.tc.val_fraction, "Validation share")->capture_default_str();
  c->add_option("--patience", a.tc.patience, "Early-stopping patience, 0 = off")->capture_default_str();
  c->add_option("--clip-norm", a.tc.clip_norm, "Gradient norm cap for recurrent models")->capture_default_str();
  c->add_option("--seed", a.tc.seed, "Seed for init, split, shuffling and baselines")->capture_default_str();
  c->add_option("--depth", a.mc.depth, "Encoder blocks")->capture_default_str();
  c->add_option("--base", a.mc.base_channels, "First block channels")->capture_default_str();
  c->add_option("--hidden", a.mc.hidden_channels, "ConvLSTM hidden channels")->capture_default_str();
  c->add_option("--rnn-layers", a.mc.rnn_layers, "Stacked ConvLSTM layers")->capture_default_str();
  c->add_option("--kernel-t", a.mc.kernel_t, "Temporal kernel")->capture_default_str();
  c->add_option("--kernel-s", a.mc.kernel_s, "Spatial kernel")->capture_default_str();
  c->add_flag("--eq5-literal", a.mc.eq5_literal, "Gate c(t-1) with the output gate");
  c->add_option("--ridge", a.ridge, "LR ridge penalty")->capture_default_str();
  c->add_option("--trees", a.forest.n_trees, "RF trees")->capture_default_str();
  c->add_option("--max-depth", a.forest.max_depth, "RF depth limit")->capture_default_str();
  c->add_option("--min-leaf", a.forest.min_samples_leaf, "RF minimum leaf size")->capture_default_str();
  c->add_option("--max-features", a.forest.max_features, "RF features tried per split")->capture_default_str();
  c->add_option("--max-rows", a.forest.max_rows, "RF pixel rows drawn, 0 = all")->capture_default_str();
}

void cmd_train(TrainArgs& a) {
  const auto t0 = Clock::now();
  std::string kind = a.model;
  std::transform(kind.begin(), kind.end(), kind.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (kind == "bm") throw ConfigError("BM has no trainable parameters; evaluate it with --model bm");
  RunManifest m("train");
  m.set("model", kind);
  m.set("n_in", std::to_string(a.mc.n_in));
  m.set("n_out", std::to_string(a.mc.n_out));
  m.set("stride", std::to_string(a.stride));
  m.set("seed", std::to_string(a.tc.seed));
  m.set("threads", std::to_string(omp_get_max_threads()));
  Dataset d;
  load_dataset(d, a.data, WindowConfig{a.mc.n_in, a.mc.n_out, a.stride}, m);
  std::cout << d.samples.size() << " samples from " << d.sequences.size() << " sequence(s)\n";

  if (kind == "lr") {
    m.set("ridge", format_number(a.ridge));
    write_checkpoint(to_checkpoint(lr_fit(d.samples, a.ridge)), a.out);
  } else if (kind == "rf") {
    a.forest.seed = a.tc.seed;
    m.set("trees", std::to_string(a.forest.n_trees));
    m.set("max_depth", std::to_string(a.forest.max_depth));
    m.set("min_leaf", std::to_string(a.forest.min_samples_leaf));
    m.set("max_features", std::to_string(a.forest.max_features));
    m.set("max_rows", std::to_string(a.forest.max_rows));
    write_checkpoint(to_checkpoint(rf_fit(d.samples, a.forest)), a.out);
  } else {
    a.mc.kind = parse_model_kind(kind);
    a.mc.height = d.sequences.front().height();
    a.mc.width = d.sequences.front().width();
    a.mc.seed = a.tc.seed;
    for (const auto& s : d.sequences) {
      if (s.height() != a.mc.height || s.width() != a.mc.width) {
        throw DimensionError("all training sequences must share one grid size");
      }
    }
    Model model(a.mc);
    std::string mc_text = a.mc.to_text();
    if (!mc_text.empty() && mc_text.back() == '\n') mc_text.pop_back();
    std::replace(mc_text.begin(), mc_text.end(), '\n', ';');
    m.set("model_config", mc_text);
    m.set("lr", format_number(a.adam.lr));
    m.set("batch", std::to_string(a.tc.batch_size));
    m.set("epochs", std::to_string(a.tc.epochs));
    m.set("val_fraction", format_number(a.tc.val_fraction));
    m.set("patience", std::to_string(a.tc.patience));
    m.set("clip_norm", format_number(a.tc.clip_norm));
    const auto result = train(model, d.samples, a.tc, a.adam, [](const EpochRecord& e) {
      std::cout << "epoch " << e.epoch << " train " << format_number(e.train_loss) << " val "
                << (std::isnan(e.val_loss) ? std::string("NA") : format_number(e.val_loss)) << " ("
                << format_number(std::round(e.seconds * 10) / 10) << " s)\n";
    });
    write_checkpoint(result.best, a.out);
    const fs::path history = a.history.empty() ? fs::path(a.out + ".history.csv") : fs::path(a.history);
    write_text(history, result.history.to_csv());
    m.set("best_epoch", std::to_string(result.history.best_epoch));
    m.output(history);
  }
  m.output(a.out);
  m.write(manifest_path(a.out), seconds_since(t0));
  std::cout << "wrote " << a.out << '\n';
}

// ---- shared forecaster loading ----

struct ForecasterArgs {
  std::string checkpoint;
  std::string model;
  std::size_t n_in = 9;
  std::size_t n_out = 3;
  std::size_t cycles = 1;
  std::size_t stride = 1;
  std::size_t batch = 8;
};

void add_forecaster_options(CLI::App* c, ForecasterArgs& a) {
  auto* ck = c->add_option("--checkpoint", a.checkpoint, "NCP1 checkpoint");
  auto* md = c->add_option("--model", a.model, "Use 'bm' for persistence without a checkpoint");
  ck->excludes(md);
  c->add_option("--feedback-cycles", a.cycles, "Prediction rounds fed back as input")->capture_default_str();
  c->add_option("--batch", a.batch, "Batch size")->capture_default_str();
}

std::unique_ptr<Forecaster> open_forecaster(const ForecasterArgs& a, RunManifest& m) {
  if (!a.checkpoint.empty()) {
    m.input(a.checkpoint);
    return load_forecaster(read_checkpoint(a.checkpoint));
  }
  std::string kind = a.model;
  std::transform(kind.begin(), kind.end(), kind.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (kind != "bm") throw ConfigError("give --checkpoint, or --model bm for persistence");
  return std::make_unique<Persistence>(a.n_in, a.n_out);
}

// ---- evaluate ----

struct EvaluateArgs {
  ForecasterArgs f;
  std::vector<std::string> data;
  std::string out;
  std::string per_sample;
  std::string dump_pgm;
  std::string subset = "all";
  double val_fraction = 0.1;
  std::uint64_t seed = 0;
  EvalConfig cfg;
};

void add_evaluate(CLI::App& app, EvaluateArgs& a) {
  auto* c = app.add_subcommand("evaluate", "Score a forecaster per lead time");
  add_forecaster_options(c, a.f);
  add_window_options(c, a.f.n_in, a.f.n_out, a.f.stride);
  c->add_option("--data", a.data, "Test NCG files")->required();
  c->add_option("--out", a.out, "Pooled metric CSV")->required();
  c->add_option("--per-sample", a.per_sample, "Per-sample metric CSV (default: <out>.per_sample.csv)");
  c->add_option("--threshold", a.cfg.threshold, "Wet-pixel threshold in mm/h")->capture_default_str();
  c->add_flag("--appendix-literal", a.cfg.appendix_literal, "Use the difference-quotient BIAS and est-mean R^2");
  c->add_option("--dump-pgm", a.dump_pgm, "Directory for predicted-frame PGM dumps");
  c->add_option("--subset", a.subset, "all | train | val split of the windows")
      ->check(CLI::IsMember({"all", "train", "val"}))
      ->capture_default_str();
  c->add_option("--val-fraction", a.val_fraction, "Split share, as in train")->capture_default_str();
  c->add_option("--seed", a.seed, "Split seed, as in train")->capture_default_str();
}

void dump_frames(Forecaster& f, const std::vector<Sample>& samples, const EvaluateArgs& a, std::int64_t dt) {
  fs::create_directories(a.dump_pgm);
  for (std::size_t b = 0; b < samples.size(); b += a.f.batch) {
    const std::span<const Sample> chunk(samples.data() + b, std::min(a.f.batch, samples.size() - b));
    const Tensor pred = feedback_forecast(f, batch_inputs(chunk), a.f.cycles);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const auto frames = tensor_to_frames(pred, i, true, 0, dt);
      for (std::size_t l = 0; l < frames.size(); ++l) {
        const auto lead = static_cast<std::int64_t>(l + 1) * dt / 60;
        write_pgm(frames[l], fs::path(a.dump_pgm) /
                                 ("sample" + std::to_string(b + i) + "_lead" + std::to_string(lead) + ".pgm"));
      }
    }
  }
}

void cmd_evaluate(EvaluateArgs& a) {
  const auto t0 = Clock::now();
  RunManifest m("evaluate");
  auto f = open_forecaster(a.f, m);
  if (a.f.cycles == 0) throw ConfigError("--feedback-cycles must be >= 1");
  Dataset d;
  load_dataset(d, a.data, WindowConfig{f->n_in(), a.f.cycles * f->n_out(), a.f.stride}, m);
  const auto samples = subset(d.samples, a.subset, a.val_fraction, a.seed);
  a.cfg.cycles = a.f.cycles;
  a.cfg.batch_size = a.f.batch;
  a.cfg.dt_seconds = d.sequences.front().dt_seconds;
  const auto report = evaluate(*f, samples, a.cfg);
  write_text(a.out, report.pooled_csv());
  const fs::path per_sample = a.per_sample.empty() ? fs::path(a.out + ".per_sample.csv") : fs::path(a.per_sample);
  write_text(per_sample, report.per_sample_csv());
  if (!a.dump_pgm.empty()) dump_frames(*f, samples, a, a.cfg.dt_seconds);
  m.set("forecaster", f->name());
  m.set("feedback_cycles", std::to_string(a.f.cycles));
  m.set("threshold", format_number(a.cfg.threshold));
  m.set("appendix_literal", a.cfg.appendix_literal ? "true" : "false");
  m.set("subset", a.subset);
  m.set("samples", std::to_string(samples.size()));
  m.set("model_space_mse", format_number(report.model_space_mse));
  m.output(a.out);
  m.output(per_sample);
  m.write(manifest_path(a.out), seconds_since(t0));
  std::cout << f->name() << " on " << samples.size() << " samples, model-space MSE "
            << format_number(report.model_space_mse) << '\n'
            << report.pooled_csv();
}

// ---- forecast ----

struct ForecastArgs {
  ForecasterArgs f;
  std::string input;
  std::string out;
};

void add_forecast(CLI::App& app, ForecastArgs& a) {
  auto* c = app.add_subcommand("forecast", "Predict frames from one input window");
  add_forecaster_options(c, a.f);
  c->add_option("--n-in", a.f.n_in, "Input frames for --model bm")->capture_default_str();
  c->add_option("--n-out", a.f.n_out, "Frames per cycle for --model bm")->capture_default_str();
  c->add_option("--input", a.input, "NCG holding exactly n_in frames")->required();
  c->add_option("--out", a.out, "Output NCG")->required();
}

void cmd_forecast(ForecastArgs& a) {
  const auto t0 = Clock::now();
  RunManifest m("forecast");
  auto f = open_forecaster(a.f, m);
  const Sequence in = read_sequence(a.input);
  m.input(a.input);
  if (in.size() != f->n_in()) {
    throw ContractError(f->name() + " needs exactly " + std::to_string(f->n_in()) + " input frames, " + a.input +
                        " holds " + std::to_string(in.size()));
  }
  const Tensor pred = feedback_forecast(*f, frames_to_tensor(in.frames), a.f.cycles);
  Sequence out;
  out.dt_seconds = in.dt_seconds;
  out.frames = tensor_to_frames(pred, 0, true, 0, in.dt_seconds);
  write_sequence(out, a.out);
  m.set("forecaster", f->name());
  m.set("feedback_cycles", std::to_string(a.f.cycles));
  m.output(a.out);
  m.write(manifest_path(a.out), seconds_since(t0));
  std::cout << "wrote " << out.size() << " frames to " << a.out << '\n';
}

// ---- gradcheck ----

struct GradcheckArgs {
  GradcheckConfig cfg;
  std::string csv;
};

void add_gradcheck(CLI::App& app, GradcheckArgs& a) {
  auto* c = app.add_subcommand("gradcheck", "Finite-difference check of every backward pass");
  c->add_option("--seed", a.cfg.seed, "Sampling seed")->capture_default_str();
  c->add_option("--only", a.cfg.only, "Families to run (repeatable or comma-separated)")->delimiter(',');
  c->add_option("--csv", a.csv, "Write max relative errors as CSV");
}

void cmd_gradcheck(GradcheckArgs& a) {
  const auto t0 = Clock::now();
  const auto entries = run_gradcheck(a.cfg);
  const std::string csv = gradcheck_csv(entries);
  if (!a.csv.empty()) write_text(a.csv, csv);
  std::cout << csv;
  std::string failed;
  for (const auto& e : entries) {
    if (!e.pass()) failed += (failed.empty() ? "" : ", ") + e.family + "/" + e.target;
  }
  std::cout << entries.size() << " checks in " << format_number(std::round(seconds_since(t0) * 10) / 10)
            << " s\n";
  if (!failed.empty()) throw GradcheckFailure("gradient check failed: " + failed);
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Precipitation nowcasting: data, training and verification"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "OpenMP threads; 1 forces the deterministic serial mode")
      ->check(CLI::NonNegativeNumber);
  SynthArgs synth;
  TrainArgs train_args;
  EvaluateArgs eval_args;
  ForecastArgs forecast_args;
  GradcheckArgs grad_args;
  add_synth(app, synth);
  add_train(app, train_args);
  add_evaluate(app, eval_args);
  add_forecast(app, forecast_args);
  add_gradcheck(app, grad_args);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  if (threads > 0) omp_set_num_threads(threads);

  try {
    const auto* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    if (name == "synth") cmd_synth(synth);
    else if (name == "train") cmd_train(train_args);
    else if (name == "evaluate") cmd_evaluate(eval_args);
    else if (name == "forecast") cmd_forecast(forecast_args);
    else cmd_gradcheck(grad_args);
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n' << app.help();
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const GradcheckFailure& e) {
    std::cerr << e.what() << '\n';
    return kGradcheck;
  } catch (const IntegrityError& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kInternal;
  } catch (const Error& e) {
    std::cerr << "data contract: " << e.what() << '\n';
    return kDataContract;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kInternal;
  }
}

}  // namespace nowcast::cli
