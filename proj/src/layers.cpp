#include "nowcast/layers.hpp"

#include <cmath>

#include "nowcast/errors.hpp"

namespace nowcast {

ConvLayer::ConvLayer(const std::string& name, const ConvSpec& s, Rng& rng)
    : spec(s),
      w(name + ".W", xavier_init({s.kernel[0], s.kernel[1], s.kernel[2], s.in_channels, s.out_channels}, rng)),
      b(name + ".b", Tensor({s.out_channels})) {}

Tensor ConvLayer::backward(const Tensor& gy, ConvCache& cache) {
  auto g = conv3d_grad(gy, cache);
  w.accumulate(g.gw);
  b.accumulate(g.gb);
  return std::move(g.gx);
}

DeconvLayer::DeconvLayer(const std::string& name, const ConvSpec& s, Rng& rng)
    : spec(s), w(name + ".W", xavier_init({s.kernel[0], s.kernel[1], s.kernel[2], s.out_channels, s.in_channels}, rng)) {}

Tensor DeconvLayer::backward(const Tensor& gy, ConvCache& cache) {
  auto g = conv_transpose3d_grad(gy, cache);
  w.accumulate(g.gw);
  return std::move(g.gx);
}

ConvUnit::ConvUnit(const std::string& name, const ConvSpec& spec, Rng& rng)
    : conv(name + ".conv", spec, rng), bn(name + ".bn", spec.out_channels) {}

std::pair<Tensor, ConvUnit::Cache> ConvUnit::forward(const Tensor& x, Mode mode) {
  Cache cache;
  auto [z, cc] = conv.forward(x);
  auto [h, ac] = pointwise(Pointwise::LeakyRelu, z);
  auto [y, bc] = batchnorm(h, bn, mode);
  cache.conv = std::move(cc);
  cache.act = std::move(ac);
  cache.bn = std::move(bc);
  return {std::move(y), std::move(cache)};
}

Tensor ConvUnit::backward(const Tensor& gy, Cache& cache) {
  auto gbn = batchnorm_grad(gy, cache.bn);
  bn.gamma.accumulate(gbn.ggamma);
  bn.beta.accumulate(gbn.gbeta);
  auto gact = pointwise_grad(gbn.gx, cache.act);
  return conv.backward(gact.ga, cache.conv);
}

void ConvUnit::collect(std::vector<ParamTensor*>& out) {
  out.push_back(&conv.w);
  out.push_back(&conv.b);
  out.push_back(&bn.gamma);
  out.push_back(&bn.beta);
}

void EncoderBlock::collect(std::vector<ParamTensor*>& out) {
  unit1.collect(out);
  unit2.collect(out);
}

EncoderOutput encoder_block_forward(const Tensor& input, EncoderBlock& blk, Mode mode) {
  for (int a = 0; a < 3; ++a) {
    if (input.rank() != 5 || input.dim(a + 1) % blk.pool[a] != 0) {
      throw DimensionError("encoder block " + blk.name + ": input " + shape_string(input.shape()) +
                           " is not divisible by the pooling window");
    }
  }
  EncoderOutput out;
  auto [h1, c1] = blk.unit1.forward(input, mode);
  auto [skip, c2] = blk.unit2.forward(h1, mode);
  auto [pooled, pc] = maxpool(skip, blk.pool);
  out.cache.u1 = std::move(c1);
  out.cache.u2 = std::move(c2);
  out.cache.pool = std::move(pc);
  out.pooled = std::move(pooled);
  out.skip = std::move(skip);
  return out;
}

Tensor encoder_block_backward(const Tensor& g_pooled, const Tensor& g_skip, EncoderBlock& blk, EncoderCache& cache) {
  Tensor g = maxpool_grad(g_pooled, cache.pool);
  if (!g_skip.empty()) axpy(1.0, g_skip, g);
  Tensor g1 = blk.unit2.backward(g, cache.u2);
  return blk.unit1.backward(g1, cache.u1);
}

void DecoderBlock::collect(std::vector<ParamTensor*>& out) {
  out.push_back(&deconv.w);
  unit1.collect(out);
  unit2.collect(out);
}

std::pair<Tensor, DecoderCache> decoder_block_forward(const Tensor& up_input, const Tensor& skip, DecoderBlock& blk,
                                                      Mode mode) {
  DecoderCache cache;
  auto [up, dc] = blk.deconv.forward(up_input);
  if (up.rank() != 5 || skip.rank() != 5 || up.dim(0) != skip.dim(0) || up.dim(1) != skip.dim(1) ||
      up.dim(2) != skip.dim(2) || up.dim(3) != skip.dim(3)) {
    throw DimensionError("decoder block " + blk.name + ": upsampled " + shape_string(up.shape()) +
                         " does not match skip " + shape_string(skip.shape()));
  }
  auto [cat, cc] = concat(up, skip);
  auto [h1, c1] = blk.unit1.forward(cat, mode);
  auto [y, c2] = blk.unit2.forward(h1, mode);
  cache.deconv = std::move(dc);
  cache.cat = std::move(cc);
  cache.u1 = std::move(c1);
  cache.u2 = std::move(c2);
  return {std::move(y), std::move(cache)};
}

std::pair<Tensor, Tensor> decoder_block_backward(const Tensor& gy, DecoderBlock& blk, DecoderCache& cache) {
  Tensor g1 = blk.unit2.backward(gy, cache.u2);
  Tensor gcat = blk.unit1.backward(g1, cache.u1);
  auto [gup, gskip] = concat_grad(gcat, cache.cat);
  Tensor gin = blk.deconv.backward(gup, cache.deconv);
  return {std::move(gin), std::move(gskip)};
}

namespace {

constexpr const char* kGateNames[4] = {"i", "f", "c", "o"};
constexpr const char* kPeepNames[3] = {"i", "f", "o"};

}  // namespace

ConvLSTMParams::ConvLSTMParams(const std::string& name, std::size_t in_ch, std::size_t hid, std::size_t k,
                               std::size_t h, std::size_t w, Rng& rng)
    : in_channels(in_ch), hidden(hid), kernel(k), height(h), width(w) {
  if (k % 2 == 0) throw ConfigError("ConvLSTM kernel must be odd");
  for (int q = 0; q < 4; ++q) {
    w_x[q] = ParamTensor(name + ".W_x" + kGateNames[q], xavier_init({1, k, k, in_ch, hid}, rng));
    w_a[q] = ParamTensor(name + ".W_a" + kGateNames[q], xavier_init({1, k, k, hid, hid}, rng));
    b[q] = ParamTensor(name + ".b_" + std::string(kGateNames[q]), Tensor({hid}));
  }
  for (int q = 0; q < 3; ++q) w_c[q] = ParamTensor(name + ".W_c" + kPeepNames[q], Tensor({h, w, hid}));
}

void ConvLSTMParams::collect(std::vector<ParamTensor*>& out) {
  for (auto& p : w_x) out.push_back(&p);
  for (auto& p : w_a) out.push_back(&p);
  for (auto& p : w_c) out.push_back(&p);
  for (auto& p : b) out.push_back(&p);
}

ConvSpec ConvLSTMParams::gate_spec() const {
  ConvSpec s;
  s.kernel = {1, kernel, kernel};
  s.padding = {0, kernel / 2, kernel / 2};
  s.in_channels = in_channels + hidden;
  s.out_channels = 4 * hidden;
  return s;
}

ConvLSTMState zero_state(const ConvLSTMParams& p, std::size_t batch) {
  return {Tensor({batch, 1, p.height, p.width, p.hidden}), Tensor({batch, 1, p.height, p.width, p.hidden})};
}

namespace {

// Packs the per-gate kernels into one [1,k,k,in+hidden,4*hidden] kernel
// acting on concat(x, a_prev).
Tensor fused_weight(const ConvLSTMParams& p) {
  const std::size_t taps = p.kernel * p.kernel, cin = p.in_channels, h = p.hidden, rows = cin + h;
  Tensor w({1, p.kernel, p.kernel, rows, 4 * h});
  for (std::size_t tap = 0; tap < taps; ++tap)
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t q = 0; q < 4; ++q)
        for (std::size_t u = 0; u < h; ++u) {
          const double v = r < cin ? p.w_x[q].value[(tap * cin + r) * h + u] : p.w_a[q].value[(tap * h + r - cin) * h + u];
          w[(tap * rows + r) * 4 * h + q * h + u] = v;
        }
  return w;
}

void split_fused_grad(const Tensor& gw, const Tensor& gb, ConvLSTMParams& p) {
  const std::size_t taps = p.kernel * p.kernel, cin = p.in_channels, h = p.hidden, rows = cin + h;
  for (std::size_t tap = 0; tap < taps; ++tap)
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t q = 0; q < 4; ++q)
        for (std::size_t u = 0; u < h; ++u) {
          const double g = gw[(tap * rows + r) * 4 * h + q * h + u];
          if (r < cin) {
            p.w_x[q].grad[(tap * cin + r) * h + u] += g;
          } else {
            p.w_a[q].grad[(tap * h + r - cin) * h + u] += g;
          }
        }
  for (std::size_t q = 0; q < 4; ++q)
    for (std::size_t u = 0; u < h; ++u) p.b[q].grad[u] += gb[q * h + u];
}

}  // namespace

std::pair<ConvLSTMState, ConvLSTMCache> convlstm_step(const Tensor& x, const ConvLSTMState& prev,
                                                      const ConvLSTMParams& p, bool eq5_literal) {
  if (x.rank() != 5 || x.dim(1) != 1 || x.dim(2) != p.height || x.dim(3) != p.width || x.dim(4) != p.in_channels) {
    throw DimensionError("convlstm_step: input " + shape_string(x.shape()) + " does not fit a " +
                         std::to_string(p.height) + "x" + std::to_string(p.width) + " cell with " +
                         std::to_string(p.in_channels) + " input channels");
  }
  const Shape state_shape{x.dim(0), 1, p.height, p.width, p.hidden};
  if (prev.a.shape() != state_shape || prev.c.shape() != state_shape) {
    throw DimensionError("convlstm_step: state shape " + shape_string(prev.a.shape()) + " != " +
                         shape_string(state_shape));
  }
  ConvLSTMCache cache;
  cache.literal = eq5_literal;
  auto [xa, cat_cache] = concat(x, prev.a);
  Tensor bias({4 * p.hidden});
  for (std::size_t q = 0; q < 4; ++q)
    for (std::size_t u = 0; u < p.hidden; ++u) bias[q * p.hidden + u] = p.b[q].value[u];
  auto [z, conv_cache] = conv3d(xa, fused_weight(p), bias, p.gate_spec());
  cache.cat = std::move(cat_cache);
  cache.gates = std::move(conv_cache);

  const std::size_t h = p.hidden, frame = p.height * p.width, n_pos = x.dim(0) * frame;
  ConvLSTMState next{Tensor(state_shape), Tensor(state_shape)};
  cache.c_prev = prev.c;
  cache.i = Tensor(state_shape);
  cache.f = Tensor(state_shape);
  cache.g = Tensor(state_shape);
  cache.o = Tensor(state_shape);
  cache.tanh_c = Tensor(state_shape);
  const auto& wci = p.w_c[0].value;
  const auto& wcf = p.w_c[1].value;
  const auto& wco = p.w_c[2].value;
  for (std::size_t pos = 0; pos < n_pos; ++pos) {
    const std::size_t hw = pos % frame;
    const double* zp = z.data().data() + pos * 4 * h;
    for (std::size_t u = 0; u < h; ++u) {
      const std::size_t s = pos * h + u, k = hw * h + u;
      const double cp = prev.c[s];
      const double i = sigmoid(zp[u] + wci[k] * cp);
      const double f = sigmoid(zp[h + u] + wcf[k] * cp);
      const double g = std::tanh(zp[2 * h + u]);
      double o, c;
      if (eq5_literal) {
        o = sigmoid(zp[3 * h + u] + wco[k] * cp);
        c = o * cp + i * g;
      } else {
        c = f * cp + i * g;
        o = sigmoid(zp[3 * h + u] + wco[k] * c);
      }
      const double tc = std::tanh(c);
      cache.i[s] = i;
      cache.f[s] = f;
      cache.g[s] = g;
      cache.o[s] = o;
      cache.tanh_c[s] = tc;
      next.c[s] = c;
      next.a[s] = o * tc;
    }
  }
  cache.c = next.c;
  return {std::move(next), std::move(cache)};
}

ConvLSTMStepGrads convlstm_step_grad(const Tensor& ga, const Tensor& gc_in, ConvLSTMCache& cache, ConvLSTMParams& p) {
  cache.consume("convlstm_step_grad");
  if (ga.shape() != cache.c.shape() || gc_in.shape() != cache.c.shape()) {
    throw DimensionError("convlstm_step_grad: upstream shape does not match state " + shape_string(cache.c.shape()));
  }
  const std::size_t h = p.hidden, frame = p.height * p.width, n_pos = cache.c.size() / h;
  Tensor dz({cache.c.dim(0), 1, p.height, p.width, 4 * h});
  ConvLSTMStepGrads out;
  out.gc_prev = Tensor(cache.c.shape());
  const auto& wci = p.w_c[0].value;
  const auto& wcf = p.w_c[1].value;
  const auto& wco = p.w_c[2].value;
  auto& gwci = p.w_c[0].grad;
  auto& gwcf = p.w_c[1].grad;
  auto& gwco = p.w_c[2].grad;
  for (std::size_t pos = 0; pos < n_pos; ++pos) {
    const std::size_t hw = pos % frame;
    double* dzp = dz.data().data() + pos * 4 * h;
    for (std::size_t u = 0; u < h; ++u) {
      const std::size_t s = pos * h + u, k = hw * h + u;
      const double i = cache.i[s], f = cache.f[s], g = cache.g[s], o = cache.o[s], tc = cache.tanh_c[s];
      const double cp = cache.c_prev[s], c = cache.c[s];
      double go = ga[s] * tc;
      double gc = gc_in[s] + ga[s] * o * (1.0 - tc * tc);
      double dzo, dzf, gcp;
      if (cache.literal) {
        go += gc * cp;
        dzo = go * o * (1.0 - o);
        gwco[k] += dzo * cp;
        gcp = gc * o + dzo * wco[k];
        dzf = 0.0;
      } else {
        dzo = go * o * (1.0 - o);
        gc += dzo * wco[k];
        gwco[k] += dzo * c;
        gcp = gc * f;
        dzf = gc * cp * f * (1.0 - f);
      }
      const double dzi = gc * g * i * (1.0 - i);
      const double dzg = gc * i * (1.0 - g * g);
      gcp += dzi * wci[k] + dzf * wcf[k];
      gwci[k] += dzi * cp;
      gwcf[k] += dzf * cp;
      out.gc_prev[s] = gcp;
      dzp[u] = dzi;
      dzp[h + u] = dzf;
      dzp[2 * h + u] = dzg;
      dzp[3 * h + u] = dzo;
    }
  }
  auto conv_g = conv3d_grad(dz, cache.gates);
  split_fused_grad(conv_g.gw, conv_g.gb, p);
  auto [gx, ga_prev] = concat_grad(conv_g.gx, cache.cat);
  out.gx = std::move(gx);
  out.ga_prev = std::move(ga_prev);
  cache.c_prev = cache.i = cache.f = cache.g = cache.o = cache.c = cache.tanh_c = Tensor();
  return out;
}

}  // namespace nowcast
