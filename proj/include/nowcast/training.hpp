#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "nowcast/checkpoint.hpp"
#include "nowcast/grid.hpp"
#include "nowcast/models.hpp"

namespace nowcast {

struct Loss {
  double value = 0;
  Tensor grad;
};

/// Mean squared error over every element; grad = 2 (pred - target) / N.
Loss mse_loss(const Tensor& pred, const Tensor& target);

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t t = 0;
};

/// One Adam update of every parameter from its `grad`. A parameter whose
/// gradient is zero everywhere is left untouched, moments included.
/// Throws NumericError naming the first parameter with a non-finite
/// gradient, before anything is modified.
void adam_step(const std::vector<ParamTensor*>& params, AdamState& st, const AdamHyper& h);

struct TrainConfig {
  std::size_t batch_size = 8;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  double val_fraction = 0.1;
  std::size_t patience = 0;  // epochs without validation improvement before stopping; 0 never stops
  double clip_norm = 5.0;    // global gradient norm cap for recurrent models; 0 disables

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0;
  double val_loss = 0;  // NaN when there is no validation split
  double seconds = 0;
  std::size_t clip_events = 0;
};

struct History {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 0 before any epoch

  /// epoch,train_loss,val_loss,seconds,clip_events
  std::string to_csv() const;
};

/// Seeded split of sample indices into (train, validation).
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double val_fraction,
                                                                             std::uint64_t seed);

/// Mean squared model-space error of `f` over `samples`, batched.
double evaluate_loss(Forecaster& f, std::span<const Sample> samples, std::size_t batch_size = 8);

struct TrainResult {
  History history;
  Checkpoint best;  // parameters at the best validation loss
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Adam on the MSE loss. Shuffles the training split every epoch, keeps
/// the parameters with the lowest validation loss and restores them into
/// `model` before returning. Throws NumericError on a non-finite loss.
TrainResult train(Model& model, std::span<const Sample> samples, const TrainConfig& tc, const AdamHyper& h,
                  const EpochCallback& on_epoch = {});

}  // namespace nowcast
