#include "nowcast/ops.hpp"

#include <cmath>

#include "nowcast/errors.hpp"

namespace nowcast {

namespace {

constexpr const char* kAxisNames[3] = {"time", "height", "width"};

void require_rank5(const Tensor& x, const std::string& op) {
  if (x.rank() != 5) throw DimensionError(op + ": expected [N,T,H,W,C] input, got " + shape_string(x.shape()));
}

}  // namespace

void ConvSpec::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (kernel[a] < 1) throw ConfigError(std::string("conv kernel along ") + kAxisNames[a] + " must be >= 1");
    if (stride[a] < 1) throw ConfigError(std::string("conv stride along ") + kAxisNames[a] + " must be >= 1");
  }
  if (in_channels < 1 || out_channels < 1) throw ConfigError("conv channel counts must be >= 1");
}

std::size_t conv_out_dim(std::size_t d_in, std::size_t k, std::size_t s, std::size_t p) {
  if (d_in + 2 * p < k) {
    throw DimensionError("padded extent " + std::to_string(d_in + 2 * p) + " is smaller than kernel " +
                         std::to_string(k));
  }
  return (d_in + 2 * p - k) / s + 1;
}

std::size_t conv_transpose_out_dim(std::size_t d_in, std::size_t k, std::size_t s, std::size_t p) {
  const long long d = static_cast<long long>(d_in - 1) * static_cast<long long>(s) - 2 * static_cast<long long>(p) +
                      static_cast<long long>(k);
  if (d_in < 1 || d < 1) throw DimensionError("transposed convolution output extent is not positive");
  return static_cast<std::size_t>(d);
}

void OpCache::consume(const char* op) {
  if (consumed) throw IntegrityError(std::string(op) + ": gradient cache already consumed");
  consumed = true;
}

std::pair<Tensor, ConvCache> conv3d(const Tensor& x, const Tensor& w, const Tensor& b, const ConvSpec& spec) {
  spec.validate();
  require_rank5(x, "conv3d");
  if (x.dim(4) != spec.in_channels) {
    throw DimensionError("conv3d: channel axis has " + std::to_string(x.dim(4)) + ", spec expects " +
                         std::to_string(spec.in_channels));
  }
  const Shape wshape{spec.kernel[0], spec.kernel[1], spec.kernel[2], spec.in_channels, spec.out_channels};
  if (w.shape() != wshape) {
    throw DimensionError("conv3d: weight shape " + shape_string(w.shape()) + " != " + shape_string(wshape));
  }
  if (!b.empty() && b.shape() != Shape{spec.out_channels}) {
    throw DimensionError("conv3d: bias shape " + shape_string(b.shape()) + " != [" +
                         std::to_string(spec.out_channels) + "]");
  }
  ConvCache cache;
  auto& g = cache.geom;
  g.batch = x.dim(0);
  g.cin = spec.in_channels;
  g.cout = spec.out_channels;
  g.kernel = spec.kernel;
  g.stride = spec.stride;
  g.pad = spec.padding;
  for (int a = 0; a < 3; ++a) {
    g.in[a] = x.dim(a + 1);
    try {
      g.out[a] = conv_out_dim(g.in[a], spec.kernel[a], spec.stride[a], spec.padding[a]);
    } catch (const DimensionError& e) {
      throw DimensionError(std::string("conv3d: ") + kAxisNames[a] + " axis: " + e.what());
    }
  }
  Tensor y({g.batch, g.out[0], g.out[1], g.out[2], g.cout});
  kernels::parallel::conv_forward(g, x.data(), w.data(), b.data(), y.data());
  cache.x = x;
  cache.w = w;
  cache.has_bias = !b.empty();
  return {std::move(y), std::move(cache)};
}

ConvGrads conv3d_grad(const Tensor& gy, ConvCache& cache) {
  const auto& g = cache.geom;
  const Shape expected{g.batch, g.out[0], g.out[1], g.out[2], g.cout};
  if (gy.shape() != expected) {
    throw DimensionError("conv3d_grad: upstream shape " + shape_string(gy.shape()) + " != " + shape_string(expected));
  }
  cache.consume("conv3d_grad");
  ConvGrads out;
  out.gx = Tensor(cache.x.shape());
  out.gw = Tensor(cache.w.shape());
  kernels::parallel::conv_backward_data(g, gy.data(), cache.w.data(), out.gx.data());
  kernels::parallel::conv_backward_filter(g, cache.x.data(), gy.data(), out.gw.data());
  if (cache.has_bias) {
    out.gb = Tensor({g.cout});
    kernels::parallel::bias_backward(gy.data(), g.cout, out.gb.data());
  }
  cache.x = Tensor();
  return out;
}

std::pair<Tensor, ConvCache> conv_transpose3d(const Tensor& x, const Tensor& w, const ConvSpec& spec) {
  spec.validate();
  require_rank5(x, "conv_transpose3d");
  if (x.dim(4) != spec.in_channels) {
    throw DimensionError("conv_transpose3d: channel axis has " + std::to_string(x.dim(4)) + ", spec expects " +
                         std::to_string(spec.in_channels));
  }
  const Shape wshape{spec.kernel[0], spec.kernel[1], spec.kernel[2], spec.out_channels, spec.in_channels};
  if (w.shape() != wshape) {
    throw DimensionError("conv_transpose3d: weight shape " + shape_string(w.shape()) + " != " + shape_string(wshape));
  }
  // Geometry of the forward convolution this operation is the adjoint of.
  ConvCache cache;
  auto& g = cache.geom;
  g.batch = x.dim(0);
  g.cin = spec.out_channels;
  g.cout = spec.in_channels;
  g.kernel = spec.kernel;
  g.stride = spec.stride;
  g.pad = spec.padding;
  for (int a = 0; a < 3; ++a) {
    g.out[a] = x.dim(a + 1);
    try {
      g.in[a] = conv_transpose_out_dim(g.out[a], spec.kernel[a], spec.stride[a], spec.padding[a]);
    } catch (const DimensionError& e) {
      throw DimensionError(std::string("conv_transpose3d: ") + kAxisNames[a] + " axis: " + e.what());
    }
  }
  Tensor y({g.batch, g.in[0], g.in[1], g.in[2], g.cin});
  kernels::parallel::conv_backward_data(g, x.data(), w.data(), y.data());
  cache.x = x;
  cache.w = w;
  return {std::move(y), std::move(cache)};
}

ConvGrads conv_transpose3d_grad(const Tensor& gy, ConvCache& cache) {
  const auto& g = cache.geom;
  const Shape expected{g.batch, g.in[0], g.in[1], g.in[2], g.cin};
  if (gy.shape() != expected) {
    throw DimensionError("conv_transpose3d_grad: upstream shape " + shape_string(gy.shape()) + " != " +
                         shape_string(expected));
  }
  cache.consume("conv_transpose3d_grad");
  ConvGrads out;
  out.gx = Tensor(cache.x.shape());
  out.gw = Tensor(cache.w.shape());
  kernels::parallel::conv_forward(g, gy.data(), cache.w.data(), {}, out.gx.data());
  // The forward conv's input is gy and its output is x.
  kernels::parallel::conv_backward_filter(g, gy.data(), cache.x.data(), out.gw.data());
  cache.x = Tensor();
  return out;
}

std::pair<Tensor, PoolCache> maxpool(const Tensor& x, std::array<std::size_t, 3> window) {
  require_rank5(x, "maxpool");
  for (int a = 0; a < 3; ++a) {
    if (window[a] < 1 || x.dim(a + 1) % window[a] != 0) {
      throw DimensionError(std::string("maxpool: ") + kAxisNames[a] + " extent " + std::to_string(x.dim(a + 1)) +
                           " is not divisible by window " + std::to_string(window[a]));
    }
  }
  const std::size_t N = x.dim(0), T = x.dim(1), H = x.dim(2), W = x.dim(3), C = x.dim(4);
  const std::size_t OT = T / window[0], OH = H / window[1], OW = W / window[2];
  Tensor y({N, OT, OH, OW, C});
  PoolCache cache;
  cache.input_shape = x.shape();
  cache.argmax.resize(y.size());
  const auto rows = static_cast<std::ptrdiff_t>(N * OT * OH);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t row = 0; row < rows; ++row) {
    const std::size_t oh = static_cast<std::size_t>(row) % OH;
    const std::size_t ot = (static_cast<std::size_t>(row) / OH) % OT;
    const std::size_t n = static_cast<std::size_t>(row) / (OH * OT);
    for (std::size_t ow = 0; ow < OW; ++ow) {
      for (std::size_t c = 0; c < C; ++c) {
        std::size_t best = 0;
        double best_v = 0.0;
        bool first = true;
        for (std::size_t dt = 0; dt < window[0]; ++dt)
          for (std::size_t dh = 0; dh < window[1]; ++dh)
            for (std::size_t dw = 0; dw < window[2]; ++dw) {
              const std::size_t idx =
                  ((((n * T + ot * window[0] + dt) * H + oh * window[1] + dh) * W) + ow * window[2] + dw) * C + c;
              if (first || x[idx] > best_v) {
                best = idx;
                best_v = x[idx];
                first = false;
              }
            }
        const std::size_t o = (((n * OT + ot) * OH + oh) * OW + ow) * C + c;
        y[o] = best_v;
        cache.argmax[o] = best;
      }
    }
  }
  return {std::move(y), std::move(cache)};
}

Tensor maxpool_grad(const Tensor& gy, PoolCache& cache) {
  if (gy.size() != cache.argmax.size()) {
    throw DimensionError("maxpool_grad: upstream shape " + shape_string(gy.shape()) + " does not match forward output");
  }
  cache.consume("maxpool_grad");
  Tensor gx(cache.input_shape);
  for (std::size_t o = 0; o < gy.size(); ++o) gx[cache.argmax[o]] += gy[o];
  return gx;
}

std::pair<Tensor, ConcatCache> concat(const Tensor& a, const Tensor& b) {
  require_rank5(a, "concat");
  require_rank5(b, "concat");
  for (int ax = 0; ax < 4; ++ax) {
    if (a.dim(ax) != b.dim(ax)) {
      throw DimensionError("concat: axis " + std::to_string(ax) + " differs: " + shape_string(a.shape()) + " vs " +
                           shape_string(b.shape()));
    }
  }
  const std::size_t ca = a.dim(4), cb = b.dim(4);
  Shape s = a.shape();
  s[4] = ca + cb;
  Tensor y(s);
  const std::size_t positions = a.dim(0) * a.dim(1) * a.dim(2) * a.dim(3);
  for (std::size_t p = 0; p < positions; ++p) {
    for (std::size_t c = 0; c < ca; ++c) y[p * (ca + cb) + c] = a[p * ca + c];
    for (std::size_t c = 0; c < cb; ++c) y[p * (ca + cb) + ca + c] = b[p * cb + c];
  }
  ConcatCache cache;
  cache.shape_a = a.shape();
  cache.shape_b = b.shape();
  return {std::move(y), std::move(cache)};
}

std::pair<Tensor, Tensor> concat_grad(const Tensor& gy, ConcatCache& cache) {
  const std::size_t ca = cache.shape_a[4], cb = cache.shape_b[4];
  Shape expected = cache.shape_a;
  expected[4] = ca + cb;
  if (gy.shape() != expected) {
    throw DimensionError("concat_grad: upstream shape " + shape_string(gy.shape()) + " != " + shape_string(expected));
  }
  cache.consume("concat_grad");
  Tensor ga(cache.shape_a), gb(cache.shape_b);
  const std::size_t positions = shape_size(cache.shape_a) / std::max<std::size_t>(ca, 1);
  const std::size_t n_pos = ca ? positions : shape_size(cache.shape_b) / std::max<std::size_t>(cb, 1);
  for (std::size_t p = 0; p < n_pos; ++p) {
    for (std::size_t c = 0; c < ca; ++c) ga[p * ca + c] = gy[p * (ca + cb) + c];
    for (std::size_t c = 0; c < cb; ++c) gb[p * cb + c] = gy[p * (ca + cb) + ca + c];
  }
  return {std::move(ga), std::move(gb)};
}

std::string to_string(Pointwise kind) {
  switch (kind) {
    case Pointwise::Sigmoid: return "sigmoid";
    case Pointwise::Tanh: return "tanh";
    case Pointwise::Relu: return "relu";
    case Pointwise::LeakyRelu: return "leaky_relu";
    case Pointwise::Add: return "add";
    case Pointwise::Hadamard: return "hadamard";
  }
  return "?";
}

bool is_binary(Pointwise kind) { return kind == Pointwise::Add || kind == Pointwise::Hadamard; }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

std::pair<Tensor, PointwiseCache> pointwise(Pointwise kind, const Tensor& x) {
  if (is_binary(kind)) throw ConfigError("pointwise: " + to_string(kind) + " needs two operands");
  Tensor y(x.shape());
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  switch (kind) {
    case Pointwise::Sigmoid:
#pragma omp parallel for simd schedule(static)
      for (std::ptrdiff_t i = 0; i < n; ++i) y[i] = sigmoid(x[i]);
      break;
    case Pointwise::Tanh:
#pragma omp parallel for simd schedule(static)
      for (std::ptrdiff_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
      break;
    case Pointwise::Relu:
      for (std::ptrdiff_t i = 0; i < n; ++i) y[i] = x[i] > 0 ? x[i] : 0.0;
      break;
    case Pointwise::LeakyRelu:
      for (std::ptrdiff_t i = 0; i < n; ++i) y[i] = x[i] > 0 ? x[i] : kLeakySlope * x[i];
      break;
    default: break;
  }
  PointwiseCache cache;
  cache.kind = kind;
  // sigmoid and tanh differentiate through their outputs
  cache.a = (kind == Pointwise::Sigmoid || kind == Pointwise::Tanh) ? y : x;
  return {std::move(y), std::move(cache)};
}

std::pair<Tensor, PointwiseCache> pointwise(Pointwise kind, const Tensor& a, const Tensor& b) {
  if (!is_binary(kind)) throw ConfigError("pointwise: " + to_string(kind) + " takes one operand");
  if (a.shape() != b.shape()) {
    throw DimensionError("pointwise " + to_string(kind) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
  }
  Tensor y(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = kind == Pointwise::Add ? a[i] + b[i] : a[i] * b[i];
  PointwiseCache cache;
  cache.kind = kind;
  if (kind == Pointwise::Hadamard) {
    cache.a = a;
    cache.b = b;
  } else {
    cache.a = Tensor(a.shape());  // shape carrier only
  }
  return {std::move(y), std::move(cache)};
}

PointwiseGrads pointwise_grad(const Tensor& gy, PointwiseCache& cache) {
  cache.consume("pointwise_grad");
  if (gy.shape() != cache.a.shape()) {
    throw DimensionError("pointwise_grad " + to_string(cache.kind) + ": upstream shape " + shape_string(gy.shape()) +
                         " != " + shape_string(cache.a.shape()));
  }
  PointwiseGrads out;
  out.ga = Tensor(gy.shape());
  const auto& a = cache.a;
  switch (cache.kind) {
    case Pointwise::Sigmoid:
      for (std::size_t i = 0; i < gy.size(); ++i) out.ga[i] = gy[i] * a[i] * (1.0 - a[i]);
      break;
    case Pointwise::Tanh:
      for (std::size_t i = 0; i < gy.size(); ++i) out.ga[i] = gy[i] * (1.0 - a[i] * a[i]);
      break;
    case Pointwise::Relu:
      for (std::size_t i = 0; i < gy.size(); ++i) out.ga[i] = a[i] > 0 ? gy[i] : 0.0;
      break;
    case Pointwise::LeakyRelu:
      for (std::size_t i = 0; i < gy.size(); ++i) out.ga[i] = a[i] > 0 ? gy[i] : kLeakySlope * gy[i];
      break;
    case Pointwise::Add:
      out.ga = gy;
      out.gb = gy;
      break;
    case Pointwise::Hadamard:
      out.gb = Tensor(gy.shape());
      for (std::size_t i = 0; i < gy.size(); ++i) {
        out.ga[i] = gy[i] * cache.b[i];
        out.gb[i] = gy[i] * a[i];
      }
      break;
  }
  cache.a = Tensor();
  cache.b = Tensor();
  return out;
}

}  // namespace nowcast
