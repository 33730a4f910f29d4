#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "nowcast/kernels.hpp"
#include "nowcast/tensor.hpp"

namespace nowcast {

/// Kernel, stride, and per-side zero padding over (time, height, width).
struct ConvSpec {
  std::array<std::size_t, 3> kernel{1, 1, 1};
  std::array<std::size_t, 3> stride{1, 1, 1};
  std::array<std::size_t, 3> padding{0, 0, 0};
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;

  void validate() const;
};

/// floor((d_in + 2p - k) / s) + 1; throws when the padded input is shorter than the kernel.
std::size_t conv_out_dim(std::size_t d_in, std::size_t k, std::size_t s, std::size_t p);
/// (d_in - 1) * s - 2p + k; throws when the result is not positive.
std::size_t conv_transpose_out_dim(std::size_t d_in, std::size_t k, std::size_t s, std::size_t p);

/// Single-use guard shared by every gradient cache.
struct OpCache {
  bool consumed = false;
  void consume(const char* op);
};

struct ConvCache : OpCache {
  Tensor x;
  Tensor w;
  kernels::ConvGeometry geom;
  bool has_bias = false;
};

struct ConvGrads {
  Tensor gx;
  Tensor gw;
  Tensor gb;  // empty when the forward call had no bias
};

/// 3-D convolution. x is [N,T,H,W,cin], w is [kt,kh,kw,cin,cout], b is
/// [cout] or empty for no bias.
std::pair<Tensor, ConvCache> conv3d(const Tensor& x, const Tensor& w, const Tensor& b, const ConvSpec& spec);
ConvGrads conv3d_grad(const Tensor& gy, ConvCache& cache);

/// Transposed 3-D convolution: the adjoint of conv3d with the same weight
/// tensor. x is [N,T,H,W,spec.in_channels] and w is
/// [kt,kh,kw,spec.out_channels,spec.in_channels], so that
/// <conv3d(u, w), v> == <u, conv_transpose3d(v, w)>.
std::pair<Tensor, ConvCache> conv_transpose3d(const Tensor& x, const Tensor& w, const ConvSpec& spec);
ConvGrads conv_transpose3d_grad(const Tensor& gy, ConvCache& cache);

struct PoolCache : OpCache {
  Shape input_shape;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

/// Non-overlapping max pooling over (t, h, w) windows. Ties go to the
/// first element in row-major scan order of the window.
std::pair<Tensor, PoolCache> maxpool(const Tensor& x, std::array<std::size_t, 3> window);
Tensor maxpool_grad(const Tensor& gy, PoolCache& cache);

struct ConcatCache : OpCache {
  Shape shape_a;
  Shape shape_b;
};

/// Channel concatenation; a's channels come first.
std::pair<Tensor, ConcatCache> concat(const Tensor& a, const Tensor& b);
std::pair<Tensor, Tensor> concat_grad(const Tensor& gy, ConcatCache& cache);

enum class Pointwise { Sigmoid, Tanh, Relu, LeakyRelu, Add, Hadamard };

inline constexpr double kLeakySlope = 0.01;

std::string to_string(Pointwise kind);
bool is_binary(Pointwise kind);

struct PointwiseCache : OpCache {
  Pointwise kind = Pointwise::Add;
  Tensor a;  // input (unary kinds keep the output for sigmoid/tanh)
  Tensor b;
};

struct PointwiseGrads {
  Tensor ga;
  Tensor gb;  // empty for unary kinds
};

std::pair<Tensor, PointwiseCache> pointwise(Pointwise kind, const Tensor& x);
std::pair<Tensor, PointwiseCache> pointwise(Pointwise kind, const Tensor& a, const Tensor& b);
PointwiseGrads pointwise_grad(const Tensor& gy, PointwiseCache& cache);

double sigmoid(double z);

}  // namespace nowcast
