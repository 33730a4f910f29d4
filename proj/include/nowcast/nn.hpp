#pragma once

#include <string>
#include <vector>

#include "nowcast/ops.hpp"
#include "nowcast/rng.hpp"
#include "nowcast/tensor.hpp"

namespace nowcast {

/// A trainable tensor and its gradient accumulator.
struct ParamTensor {
  std::string name;
  Tensor value;
  Tensor grad;

  ParamTensor() = default;
  ParamTensor(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad.fill(0.0); }
  void accumulate(const Tensor& g) { axpy(1.0, g, grad); }
};

enum class Mode { Train, Infer };

/// Glorot fan-in and fan-out. Conv kernels [k..., cin, cout] count the
/// receptive field; matrices [in, out] use their two extents.
std::pair<std::size_t, std::size_t> fan_in_out(const Shape& shape);

/// Uniform on [-b, b] with b = sqrt(6 / (fan_in + fan_out)).
Tensor xavier_init(const Shape& shape, Rng& rng);

struct BatchNormState {
  ParamTensor gamma;
  ParamTensor beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double decay = 0.9;
  double epsilon = 1e-5;
  bool trained = false;  // at least one train-mode batch seen

  BatchNormState() = default;
  BatchNormState(const std::string& name, std::size_t channels, double decay = 0.9, double epsilon = 1e-5);

  std::size_t channels() const { return running_mean.size(); }
};

struct BatchNormCache : OpCache {
  Mode mode = Mode::Train;
  Tensor xhat;
  std::vector<double> inv_std;
  std::vector<double> gamma;
  bool untrained_stats = false;  // infer mode ran on initial running stats
};

struct BatchNormGrads {
  Tensor gx;
  Tensor ggamma;
  Tensor gbeta;
};

/// Per-channel normalization over every non-channel axis. Train mode uses
/// batch statistics and folds them into the running averages; infer mode
/// reads the running averages and leaves the state untouched.
std::pair<Tensor, BatchNormCache> batchnorm(const Tensor& x, BatchNormState& st, Mode mode);
BatchNormGrads batchnorm_grad(const Tensor& gy, BatchNormCache& cache);

/// Sum of squared gradient entries over all parameters, square-rooted.
double global_grad_norm(const std::vector<ParamTensor*>& params);

}  // namespace nowcast
