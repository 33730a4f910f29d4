#pragma once

#include <cstddef>
#include <string>

#include "nowcast/tensor.hpp"

namespace nowcast {

/// Anything that maps n_in model-space frames to n_out model-space frames.
/// Inputs and outputs are [N, T, H, W, 1].
class Forecaster {
 public:
  virtual ~Forecaster() = default;

  virtual std::string name() const = 0;
  virtual std::size_t n_in() const { return 9; }
  virtual std::size_t n_out() const { return 3; }
  virtual Tensor predict(const Tensor& x) = 0;
};

/// Repeats the last input frame at every lead.
class Persistence final : public Forecaster {
 public:
  explicit Persistence(std::size_t n_in = 9, std::size_t n_out = 3) : n_in_(n_in), n_out_(n_out) {}

  std::string name() const override { return "BM"; }
  std::size_t n_in() const override { return n_in_; }
  std::size_t n_out() const override { return n_out_; }
  Tensor predict(const Tensor& x) override;

 private:
  std::size_t n_in_;
  std::size_t n_out_;
};

/// bm_forecast: prediction[t] = x[last] for every t, value-exact.
Tensor bm_forecast(const Tensor& x, std::size_t n_out = 3);

}  // namespace nowcast
