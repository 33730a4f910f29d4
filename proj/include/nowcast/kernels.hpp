#pragma once

#include <array>
#include <cstddef>
#include <span>

namespace nowcast::kernels {

/// Geometry of a strided, zero-padded 3-D convolution over channels-last
/// activations. `in` is the conv input extent (t, h, w) and `out` the conv
/// output extent; a transposed convolution reuses the same geometry with
/// the roles of input and output exchanged.
struct ConvGeometry {
  std::size_t batch = 1;
  std::array<std::size_t, 3> in{};
  std::array<std::size_t, 3> out{};
  std::array<std::size_t, 3> kernel{1, 1, 1};
  std::array<std::size_t, 3> stride{1, 1, 1};
  std::array<std::size_t, 3> pad{0, 0, 0};
  std::size_t cin = 1;
  std::size_t cout = 1;

  std::size_t in_size() const { return batch * in[0] * in[1] * in[2] * cin; }
  std::size_t out_size() const { return batch * out[0] * out[1] * out[2] * cout; }
  std::size_t weight_size() const { return kernel[0] * kernel[1] * kernel[2] * cin * cout; }
};

// Production kernels: im2col + GEMM per (batch, output time) slab, with
// OpenMP across slabs. Reductions run in a fixed order, so results do not
// depend on the OpenMP thread count.
namespace parallel {

/// y = conv(x, w) + bias. `bias` may be empty.
void conv_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                  std::span<const double> bias, std::span<double> y);
/// gx = adjoint of conv_forward in x, applied to gy. Overwrites gx.
void conv_backward_data(const ConvGeometry& g, std::span<const double> gy, std::span<const double> w,
                        std::span<double> gx);
/// gw += d<y, gy>/dw. Accumulates into gw.
void conv_backward_filter(const ConvGeometry& g, std::span<const double> x, std::span<const double> gy,
                          std::span<double> gw);
/// gb += sum of gy over every non-channel axis.
void bias_backward(std::span<const double> gy, std::size_t channels, std::span<double> gb);

}  // namespace parallel

// Direct loop-nest transcription of the convolution sum. Serial, slow, and
// kept only as the reference the parallel kernels are tested against.
namespace reference {

void conv_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                  std::span<const double> bias, std::span<double> y);
void conv_backward_data(const ConvGeometry& g, std::span<const double> gy, std::span<const double> w,
                        std::span<double> gx);
void conv_backward_filter(const ConvGeometry& g, std::span<const double> x, std::span<const double> gy,
                          std::span<double> gw);
void bias_backward(std::span<const double> gy, std::size_t channels, std::span<double> gb);

}  // namespace reference

/// Sets the OpenMP thread count; 1 selects the single-threaded mode.
void set_threads(int n);
int threads();

}  // namespace nowcast::kernels
