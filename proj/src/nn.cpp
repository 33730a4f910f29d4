#include "nowcast/nn.hpp"

#include <cmath>

#include "nowcast/errors.hpp"

namespace nowcast {

std::pair<std::size_t, std::size_t> fan_in_out(const Shape& shape) {
  if (shape.size() < 2) throw ConfigError("xavier_init: shape " + shape_string(shape) + " has no fan-in/fan-out");
  std::size_t receptive = 1;
  for (std::size_t i = 0; i + 2 < shape.size(); ++i) receptive *= shape[i];
  const std::size_t fan_in = receptive * shape[shape.size() - 2];
  const std::size_t fan_out = receptive * shape[shape.size() - 1];
  if (fan_in == 0 || fan_out == 0) throw ConfigError("xavier_init: zero fan for shape " + shape_string(shape));
  return {fan_in, fan_out};
}

Tensor xavier_init(const Shape& shape, Rng& rng) {
  const auto [fan_in, fan_out] = fan_in_out(shape);
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor w(shape);
  for (double& v : w.data()) v = rng.uniform(-bound, bound);
  return w;
}

BatchNormState::BatchNormState(const std::string& name, std::size_t channels, double decay_, double epsilon_)
    : gamma(name + ".gamma", Tensor({channels}, 1.0)),
      beta(name + ".beta", Tensor({channels}, 0.0)),
      running_mean(channels, 0.0),
      running_var(channels, 1.0),
      decay(decay_),
      epsilon(epsilon_) {
  if (!(decay > 0 && decay < 1)) throw ConfigError("batchnorm decay must lie in (0, 1)");
  if (!(epsilon > 0)) throw ConfigError("batchnorm epsilon must be positive");
}

std::pair<Tensor, BatchNormCache> batchnorm(const Tensor& x, BatchNormState& st, Mode mode) {
  if (x.rank() < 1 || x.shape().back() != st.channels()) {
    throw DimensionError("batchnorm: channel axis of " + shape_string(x.shape()) + " does not match " +
                         std::to_string(st.channels()) + " channels");
  }
  const std::size_t C = st.channels();
  const std::size_t M = x.size() / C;
  if (M == 0) throw DimensionError("batchnorm: empty input");
  BatchNormCache cache;
  cache.mode = mode;
  cache.inv_std.assign(C, 0.0);
  cache.gamma.assign(st.gamma.value.data().begin(), st.gamma.value.data().end());
  cache.xhat = Tensor(x.shape());
  Tensor y(x.shape());

  const double* xp = x.data().data();
  std::vector<double> mean(C), inv(C);
  if (mode == Mode::Train) {
    // Shifting by the first pixel keeps a constant channel's mean exact.
    std::vector<double> s(C, 0.0), ss(C, 0.0);
    for (std::size_t p = 0; p < M; ++p) {
      for (std::size_t c = 0; c < C; ++c) s[c] += xp[p * C + c] - xp[c];
    }
    for (std::size_t c = 0; c < C; ++c) mean[c] = xp[c] + s[c] / static_cast<double>(M);
    for (std::size_t p = 0; p < M; ++p) {
      for (std::size_t c = 0; c < C; ++c) {
        const double d = xp[p * C + c] - mean[c];
        ss[c] += d * d;
      }
    }
    for (std::size_t c = 0; c < C; ++c) {
      const double var = ss[c] / static_cast<double>(M);
      inv[c] = 1.0 / std::sqrt(var + st.epsilon);
      st.running_mean[c] = st.decay * st.running_mean[c] + (1.0 - st.decay) * mean[c];
      st.running_var[c] = st.decay * st.running_var[c] + (1.0 - st.decay) * var;
    }
    st.trained = true;
  } else {
    cache.untrained_stats = !st.trained;
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = st.running_mean[c];
      inv[c] = 1.0 / std::sqrt(st.running_var[c] + st.epsilon);
    }
  }
  cache.inv_std = inv;
  double* xh = cache.xhat.data().data();
  double* yp = y.data().data();
  const double* g = st.gamma.value.data().data();
  const double* b = st.beta.value.data().data();
  for (std::size_t p = 0; p < M; ++p) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t i = p * C + c;
      xh[i] = (xp[i] - mean[c]) * inv[c];
      yp[i] = g[c] * xh[i] + b[c];
    }
  }
  return {std::move(y), std::move(cache)};
}

BatchNormGrads batchnorm_grad(const Tensor& gy, BatchNormCache& cache) {
  cache.consume("batchnorm_grad");
  if (gy.shape() != cache.xhat.shape()) {
    throw DimensionError("batchnorm_grad: upstream shape " + shape_string(gy.shape()) + " != " +
                         shape_string(cache.xhat.shape()));
  }
  const std::size_t C = cache.inv_std.size();
  const std::size_t M = gy.size() / C;
  BatchNormGrads out{Tensor(gy.shape()), Tensor({C}), Tensor({C})};
  const double* g = gy.data().data();
  const double* xh = cache.xhat.data().data();
  double* gx = out.gx.data().data();
  std::vector<double> sum_g(C, 0.0), sum_gx(C, 0.0), scale(C), mg(C, 0.0), mgx(C, 0.0);
  for (std::size_t p = 0; p < M; ++p) {
    for (std::size_t c = 0; c < C; ++c) {
      sum_g[c] += g[p * C + c];
      sum_gx[c] += g[p * C + c] * xh[p * C + c];
    }
  }
  for (std::size_t c = 0; c < C; ++c) {
    out.gbeta[c] = sum_g[c];
    out.ggamma[c] = sum_gx[c];
    scale[c] = cache.gamma[c] * cache.inv_std[c];
    if (cache.mode == Mode::Train) {
      mg[c] = sum_g[c] / static_cast<double>(M);
      mgx[c] = sum_gx[c] / static_cast<double>(M);
    }
  }
  for (std::size_t p = 0; p < M; ++p) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t i = p * C + c;
      gx[i] = scale[c] * (g[i] - mg[c] - xh[i] * mgx[c]);
    }
  }
  cache.xhat = Tensor();
  return out;
}

double global_grad_norm(const std::vector<ParamTensor*>& params) {
  double s = 0.0;
  for (const auto* p : params) {
    for (double g : p->grad.data()) s += g * g;
  }
  return std::sqrt(s);
}

}  // namespace nowcast
