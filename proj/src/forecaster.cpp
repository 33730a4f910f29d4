#include "nowcast/forecaster.hpp"

#include <vector>

#include "nowcast/errors.hpp"

namespace nowcast {

Tensor bm_forecast(const Tensor& x, std::size_t n_out) {
  if (x.rank() != 5 || x.dim(1) < 1) throw DimensionError("bm_forecast: expected [N,T,H,W,C] input");
  const Tensor last = slice_time(x, x.dim(1) - 1, 1);
  const std::vector<Tensor> copies(n_out, last);
  return concat_time(copies);
}

Tensor Persistence::predict(const Tensor& x) {
  if (x.rank() != 5 || x.dim(1) != n_in_) {
    throw DimensionError("BM: expected " + std::to_string(n_in_) + " input frames, got " + shape_string(x.shape()));
  }
  return bm_forecast(x, n_out_);
}

}  // namespace nowcast
