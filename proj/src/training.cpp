#include "nowcast/training.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "nowcast/errors.hpp"
#include "nowcast/rng.hpp"
#include "nowcast/text.hpp"

namespace nowcast {

Loss mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("mse_loss: prediction " + shape_string(pred.shape()) + " vs target " +
                         shape_string(target.shape()));
  }
  if (pred.size() == 0) throw DimensionError("mse_loss: empty tensors");
  Loss out{0.0, Tensor(pred.shape())};
  const double n = static_cast<double>(pred.size());
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    s += d * d;
    out.grad[i] = 2.0 * d / n;
  }
  out.value = s / n;
  return out;
}

void AdamHyper::validate() const {
  if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("adam: lr must be positive");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("adam: betas must lie in [0, 1)");
  if (!(eps > 0)) throw ConfigError("adam: eps must be positive");
}

void adam_step(const std::vector<ParamTensor*>& params, AdamState& st, const AdamHyper& h) {
  h.validate();
  for (const auto* p : params) {
    if (!p->grad.all_finite()) throw NumericError("adam: non-finite gradient in parameter " + p->name);
    if (p->grad.shape() != p->value.shape()) throw DimensionError("adam: gradient shape mismatch in " + p->name);
  }
  if (st.m.empty()) {
    for (const auto* p : params) {
      st.m.emplace_back(p->value.shape());
      st.v.emplace_back(p->value.shape());
    }
  }
  if (st.m.size() != params.size()) throw DimensionError("adam: state tracks a different parameter list");
  ++st.t;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(st.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    if (st.m[k].shape() != p.value.shape()) throw DimensionError("adam: state shape mismatch in " + p.name);
    if (max_abs(p.grad) == 0.0) continue;
    auto& m = st.m[k];
    auto& v = st.v[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g;
      v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
      const double mhat = m[i] / bc1, vhat = v[i] / bc2;
      p.value[i] -= h.lr * mhat / (std::sqrt(vhat) + h.eps);
    }
  }
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train: batch size must be >= 1");
  if (!(val_fraction >= 0 && val_fraction < 1)) throw ConfigError("train: validation fraction must lie in [0, 1)");
  if (!(clip_norm >= 0)) throw ConfigError("train: clip norm must be >= 0");
}

std::string History::to_csv() const {
  std::ostringstream os;
  os << "epoch,train_loss,val_loss,seconds,clip_events\n";
  for (const auto& e : epochs) {
    os << e.epoch << ',' << format_number(e.train_loss) << ','
       << (std::isnan(e.val_loss) ? std::string("NA") : format_number(e.val_loss)) << ',' << format_number(e.seconds)
       << ',' << e.clip_events << '\n';
  }
  return os.str();
}

namespace {

std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.index(i)]);
  return p;
}

std::vector<Sample> gather(std::span<const Sample> samples, std::span<const std::size_t> idx) {
  std::vector<Sample> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(samples[i]);
  return out;
}

}  // namespace

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double val_fraction,
                                                                             std::uint64_t seed) {
  Rng rng(seed, 41);
  auto p = permutation(n, rng);
  auto n_val = static_cast<std::size_t>(std::ceil(val_fraction * static_cast<double>(n)));
  if (n_val >= n) n_val = n > 0 ? n - 1 : 0;
  std::vector<std::size_t> val(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> tr(p.begin() + static_cast<std::ptrdiff_t>(n_val), p.end());
  return {std::move(tr), std::move(val)};
}

double evaluate_loss(Forecaster& f, std::span<const Sample> samples, std::size_t batch_size) {
  if (samples.empty()) throw DataError("evaluate_loss: no samples");
  if (batch_size == 0) throw ConfigError("evaluate_loss: batch size must be >= 1");
  double s = 0.0;
  std::size_t count = 0;
  for (std::size_t b = 0; b < samples.size(); b += batch_size) {
    const auto chunk = samples.subspan(b, std::min(batch_size, samples.size() - b));
    const Tensor y = f.predict(batch_inputs(chunk));
    const Tensor t = batch_targets(chunk);
    if (y.shape() != t.shape()) {
      throw ContractError(f.name() + ": prediction " + shape_string(y.shape()) + " does not match targets " +
                          shape_string(t.shape()));
    }
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double d = y[i] - t[i];
      s += d * d;
    }
    count += y.size();
  }
  return s / static_cast<double>(count);
}

TrainResult train(Model& model, std::span<const Sample> samples, const TrainConfig& tc, const AdamHyper& h,
                  const EpochCallback& on_epoch) {
  tc.validate();
  h.validate();
  if (samples.empty()) throw DataError("train: no samples");
  const auto [train_idx, val_idx] = split_indices(samples.size(), tc.val_fraction, tc.seed);
  const auto val = gather(samples, val_idx);
  TrainResult result;
  result.best = to_checkpoint(model);
  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  AdamState adam;
  Rng shuffle(tc.seed, 43);
  const auto params = model.params();
  const bool clip = is_recurrent(model.config().kind) && tc.clip_norm > 0;

  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto order = permutation(train_idx.size(), shuffle);
    EpochRecord rec;
    rec.epoch = epoch;
    double loss_sum = 0.0;
    std::size_t elements = 0, batch = 0;
    for (std::size_t b = 0; b < order.size(); b += tc.batch_size, ++batch) {
      std::vector<Sample> chunk;
      for (std::size_t i = b; i < std::min(b + tc.batch_size, order.size()); ++i) {
        chunk.push_back(samples[train_idx[order[i]]]);
      }
      const Tensor x = batch_inputs(chunk);
      ModelTape tape;
      const Tensor y = model.forward(x, Mode::Train, tape);
      Loss loss = mse_loss(y, batch_targets(chunk));
      if (!std::isfinite(loss.value)) {
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch + 1));
      }
      model.backward(loss.grad, tape);
      if (clip) {
        const double norm = global_grad_norm(params);
        if (norm > tc.clip_norm) {
          for (auto* p : params) p->grad = scaled(p->grad, tc.clip_norm / norm);
          ++rec.clip_events;
        }
      }
      adam_step(params, adam, h);
      loss_sum += loss.value * static_cast<double>(y.size());
      elements += y.size();
    }
    rec.train_loss = elements > 0 ? loss_sum / static_cast<double>(elements) : 0.0;
    rec.val_loss = val.empty() ? std::nan("") : evaluate_loss(model, val, tc.batch_size);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const double score = val.empty() ? rec.train_loss : rec.val_loss;
    if (!std::isfinite(score)) {
      throw NumericError("train: non-finite validation loss after epoch " + std::to_string(epoch));
    }
    result.history.epochs.push_back(rec);
    if (score < best) {
      best = score;
      since_best = 0;
      result.history.best_epoch = epoch;
      result.best = to_checkpoint(model);
    } else {
      ++since_best;
    }
    if (on_epoch) on_epoch(rec);
    if (tc.patience > 0 && since_best >= tc.patience) break;
  }
  load_into(model, result.best);
  return result;
}

}  // namespace nowcast
