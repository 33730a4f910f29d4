#include "nowcast/kernels.hpp"

#include <algorithm>
#include <memory>
#include <type_traits>
#include <utility>
#include <vector>

#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Core>

#include <omp.h>

namespace nowcast::kernels {

namespace {

using Index = std::ptrdiff_t;

inline std::size_t in_offset(const ConvGeometry& g, std::size_t n, std::size_t t, std::size_t h, std::size_t w) {
  return (((n * g.in[0] + t) * g.in[1] + h) * g.in[2] + w) * g.cin;
}

inline std::size_t out_offset(const ConvGeometry& g, std::size_t n, std::size_t t, std::size_t h, std::size_t w) {
  return (((n * g.out[0] + t) * g.out[1] + h) * g.out[2] + w) * g.cout;
}

inline std::size_t weight_offset(const ConvGeometry& g, std::size_t kt, std::size_t kh, std::size_t kw) {
  return ((kt * g.kernel[1] + kh) * g.kernel[2] + kw) * g.cin * g.cout;
}

// Input coordinate reached from output coordinate `o` through kernel tap `k`,
// or -1 when it falls into the zero padding.
inline Index source(std::size_t o, std::size_t k, std::size_t stride, std::size_t pad, std::size_t extent) {
  const Index i = static_cast<Index>(o * stride + k) - static_cast<Index>(pad);
  return (i < 0 || i >= static_cast<Index>(extent)) ? -1 : i;
}

// Output coordinate that reads input coordinate `i` through tap `k`, or -1.
inline Index target(std::size_t i, std::size_t k, std::size_t stride, std::size_t pad, std::size_t extent) {
  const Index num = static_cast<Index>(i + pad) - static_cast<Index>(k);
  if (num < 0 || num % static_cast<Index>(stride) != 0) return -1;
  const Index o = num / static_cast<Index>(stride);
  return o >= static_cast<Index>(extent) ? -1 : o;
}

}  // namespace

namespace parallel {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

std::size_t taps(const ConvGeometry& g) { return g.kernel[0] * g.kernel[1] * g.kernel[2]; }

// Output range [lo, hi) along one axis whose tap `k` lands inside the input.
std::pair<std::size_t, std::size_t> valid_range(std::size_t k, std::size_t stride, std::size_t pad, std::size_t in,
                                                 std::size_t out) {
  const Index first = static_cast<Index>(pad) - static_cast<Index>(k);
  const Index lo = first <= 0 ? 0 : (first + static_cast<Index>(stride) - 1) / static_cast<Index>(stride);
  const Index last = static_cast<Index>(in) + static_cast<Index>(pad) - static_cast<Index>(k) - 1;
  const Index hi = last < 0 ? 0 : std::min<Index>(last / static_cast<Index>(stride) + 1, static_cast<Index>(out));
  return {static_cast<std::size_t>(std::min(lo, hi)), static_cast<std::size_t>(hi)};
}

// Visits every (output row, tap) pair of rows [oh0, oh1) of slab (n, ot)
// as a strided run: fn(tap, tile row, first ow, count, input offset or npos).
template <typename Fn>
void for_each_run(const ConvGeometry& g, std::size_t n, std::size_t ot, std::size_t oh0, std::size_t oh1, Fn&& fn) {
  constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::size_t tap = 0;
  for (std::size_t kt = 0; kt < g.kernel[0]; ++kt) {
    const Index it = source(ot, kt, g.stride[0], g.pad[0], g.in[0]);
    for (std::size_t kh = 0; kh < g.kernel[1]; ++kh) {
      for (std::size_t kw = 0; kw < g.kernel[2]; ++kw, ++tap) {
        const auto [lo, hi] = valid_range(kw, g.stride[2], g.pad[2], g.in[2], g.out[2]);
        for (std::size_t oh = oh0; oh < oh1; ++oh) {
          const Index ih = it < 0 ? -1 : source(oh, kh, g.stride[1], g.pad[1], g.in[1]);
          const std::size_t row = (oh - oh0) * g.out[2];
          if (ih < 0 || lo >= hi) {
            fn(tap, row, 0, g.out[2], npos);
            continue;
          }
          const std::size_t iw = lo * g.stride[2] + kw - g.pad[2];
          fn(tap, row, 0, lo, npos);
          fn(tap, row, lo, hi - lo, in_offset(g, n, static_cast<std::size_t>(it), static_cast<std::size_t>(ih), iw));
          fn(tap, row, hi, g.out[2] - hi, npos);
        }
      }
    }
  }
}

// Calls fn with the channel count as a compile-time constant for common
// widths, so per-pixel copies inline instead of calling into libc.
template <typename Fn>
void with_channels(std::size_t cin, Fn&& fn) {
  switch (cin) {
    case 1: return fn(std::integral_constant<std::size_t, 1>{});
    case 2: return fn(std::integral_constant<std::size_t, 2>{});
    case 4: return fn(std::integral_constant<std::size_t, 4>{});
    case 8: return fn(std::integral_constant<std::size_t, 8>{});
    case 16: return fn(std::integral_constant<std::size_t, 16>{});
    case 32: return fn(std::integral_constant<std::size_t, 32>{});
    default: return fn(cin);
  }
}

// Patch matrix for output rows [oh0, oh1) of slab (n, ot): one row per
// output (oh, ow), one column per (kt, kh, kw, ci), zeros where the kernel
// reads padding.
void im2col(const ConvGeometry& g, std::span<const double> x, std::size_t n, std::size_t ot, std::size_t oh0,
            std::size_t oh1, double* col) {
  with_channels(g.cin, [&](auto cin_c) {
    const std::size_t cin = cin_c, K = taps(g) * cin, step = g.stride[2] * cin;
    for_each_run(g, n, ot, oh0, oh1, [&](std::size_t tap, std::size_t row, std::size_t ow, std::size_t count,
                                         std::size_t src) {
      double* dst = col + (row + ow) * K + tap * cin;
      if (src == static_cast<std::size_t>(-1)) {
        for (std::size_t j = 0; j < count; ++j, dst += K) {
          for (std::size_t ci = 0; ci < cin; ++ci) dst[ci] = 0.0;
        }
      } else {
        const double* xp = x.data() + src;
        for (std::size_t j = 0; j < count; ++j, dst += K, xp += step) {
          for (std::size_t ci = 0; ci < cin; ++ci) dst[ci] = xp[ci];
        }
      }
    });
  });
}

// Scatter-adds a patch matrix back onto the input grid of batch entry n.
void col2im(const ConvGeometry& g, const double* col, std::size_t n, std::size_t ot, std::size_t oh0,
            std::size_t oh1, std::span<double> gx) {
  with_channels(g.cin, [&](auto cin_c) {
    const std::size_t cin = cin_c, K = taps(g) * cin, step = g.stride[2] * cin;
    for_each_run(g, n, ot, oh0, oh1, [&](std::size_t tap, std::size_t row, std::size_t ow, std::size_t count,
                                         std::size_t dst) {
      if (dst == static_cast<std::size_t>(-1)) return;
      const double* src = col + (row + ow) * K + tap * cin;
      double* gp = gx.data() + dst;
      for (std::size_t j = 0; j < count; ++j, src += K, gp += step) {
        for (std::size_t ci = 0; ci < cin; ++ci) gp[ci] += src[ci];
      }
    });
  });
}

// Per-thread scratch that is reused across calls and never zero-filled.
double* scratch(std::size_t size) {
  thread_local std::unique_ptr<double[]> buf;
  thread_local std::size_t cap = 0;
  if (size > cap) {
    buf.reset(new double[size]);
    cap = size;
  }
  return buf.get();
}

// Output rows per tile, sized so a tile's patch matrix stays cache resident.
std::size_t tile_rows(const ConvGeometry& g) {
  constexpr std::size_t budget = 1 << 15;
  const std::size_t per_row = g.out[2] * taps(g) * g.cin;
  return std::clamp<std::size_t>(budget / std::max<std::size_t>(per_row, 1), 1, std::max<std::size_t>(g.out[1], 1));
}

}  // namespace

void conv_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                  std::span<const double> bias, std::span<double> y) {
  const std::size_t K = taps(g) * g.cin, C = g.cout, tile = tile_rows(g);
  const ConstMatrixMap wm(w.data(), static_cast<Index>(K), static_cast<Index>(C));
  const auto slabs = static_cast<Index>(g.batch * g.out[0]);
#pragma omp parallel
  {
    double* col = scratch(tile * g.out[2] * K);
#pragma omp for schedule(static)
    for (Index slab = 0; slab < slabs; ++slab) {
      const std::size_t n = static_cast<std::size_t>(slab) / g.out[0], ot = static_cast<std::size_t>(slab) % g.out[0];
      for (std::size_t oh0 = 0; oh0 < g.out[1]; oh0 += tile) {
        const std::size_t oh1 = std::min(oh0 + tile, g.out[1]);
        const auto rows = static_cast<Index>((oh1 - oh0) * g.out[2]);
        im2col(g, x, n, ot, oh0, oh1, col);
        MatrixMap ym(y.data() + out_offset(g, n, ot, oh0, 0), rows, static_cast<Index>(C));
        ym.noalias() = ConstMatrixMap(col, rows, static_cast<Index>(K)) * wm;
        if (!bias.empty()) ym.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data(), static_cast<Index>(C));
      }
    }
  }
}

void conv_backward_data(const ConvGeometry& g, std::span<const double> gy, std::span<const double> w,
                        std::span<double> gx) {
  const std::size_t K = taps(g) * g.cin, C = g.cout, tile = tile_rows(g);
  const ConstMatrixMap wm(w.data(), static_cast<Index>(K), static_cast<Index>(C));
  std::fill(gx.begin(), gx.end(), 0.0);
  // Slabs of one batch entry overlap on the input grid, so a batch entry
  // is the unit of parallel work.
#pragma omp parallel
  {
    double* col = scratch(tile * g.out[2] * K);
#pragma omp for schedule(static)
    for (Index n = 0; n < static_cast<Index>(g.batch); ++n) {
      const auto nn = static_cast<std::size_t>(n);
      for (std::size_t ot = 0; ot < g.out[0]; ++ot) {
        for (std::size_t oh0 = 0; oh0 < g.out[1]; oh0 += tile) {
          const std::size_t oh1 = std::min(oh0 + tile, g.out[1]);
          const auto rows = static_cast<Index>((oh1 - oh0) * g.out[2]);
          MatrixMap cm(col, rows, static_cast<Index>(K));
          cm.noalias() = ConstMatrixMap(gy.data() + out_offset(g, nn, ot, oh0, 0), rows, static_cast<Index>(C)) *
                         wm.transpose();
          col2im(g, col, nn, ot, oh0, oh1, gx);
        }
      }
    }
  }
}

void conv_backward_filter(const ConvGeometry& g, std::span<const double> x, std::span<const double> gy,
                          std::span<double> gw) {
  const std::size_t tile = tile_rows(g);
  const auto K = static_cast<Index>(taps(g) * g.cin), C = static_cast<Index>(g.cout);
  // Per-batch-entry partial sums, reduced in batch order.
  std::vector<RowMatrix> partial(g.batch, RowMatrix::Zero(K, C));
#pragma omp parallel
  {
    double* col = scratch(tile * g.out[2] * static_cast<std::size_t>(K));
#pragma omp for schedule(static)
    for (Index n = 0; n < static_cast<Index>(g.batch); ++n) {
      const auto nn = static_cast<std::size_t>(n);
      for (std::size_t ot = 0; ot < g.out[0]; ++ot) {
        for (std::size_t oh0 = 0; oh0 < g.out[1]; oh0 += tile) {
          const std::size_t oh1 = std::min(oh0 + tile, g.out[1]);
          const auto rows = static_cast<Index>((oh1 - oh0) * g.out[2]);
          im2col(g, x, nn, ot, oh0, oh1, col);
          partial[nn].noalias() += ConstMatrixMap(col, rows, K).transpose() *
                                   ConstMatrixMap(gy.data() + out_offset(g, nn, ot, oh0, 0), rows, C);
        }
      }
    }
  }
  MatrixMap gwm(gw.data(), K, C);
  for (const auto& p : partial) gwm += p;
}

void bias_backward(std::span<const double> gy, std::size_t channels, std::span<double> gb) {
  const std::size_t positions = gy.size() / channels;
  for (std::size_t p = 0; p < positions; ++p) {
    const double* row = gy.data() + p * channels;
    for (std::size_t c = 0; c < channels; ++c) gb[c] += row[c];
  }
}

}  // namespace parallel

namespace reference {

void conv_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                  std::span<const double> bias, std::span<double> y) {
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t ot = 0; ot < g.out[0]; ++ot)
      for (std::size_t oh = 0; oh < g.out[1]; ++oh)
        for (std::size_t ow = 0; ow < g.out[2]; ++ow)
          for (std::size_t co = 0; co < g.cout; ++co) {
            double s = bias.empty() ? 0.0 : bias[co];
            for (std::size_t kt = 0; kt < g.kernel[0]; ++kt)
              for (std::size_t kh = 0; kh < g.kernel[1]; ++kh)
                for (std::size_t kw = 0; kw < g.kernel[2]; ++kw)
                  for (std::size_t ci = 0; ci < g.cin; ++ci) {
                    const Index it = source(ot, kt, g.stride[0], g.pad[0], g.in[0]);
                    const Index ih = source(oh, kh, g.stride[1], g.pad[1], g.in[1]);
                    const Index iw = source(ow, kw, g.stride[2], g.pad[2], g.in[2]);
                    if (it < 0 || ih < 0 || iw < 0) continue;
                    s += x[in_offset(g, n, it, ih, iw) + ci] * w[weight_offset(g, kt, kh, kw) + ci * g.cout + co];
                  }
            y[out_offset(g, n, ot, oh, ow) + co] = s;
          }
}

void conv_backward_data(const ConvGeometry& g, std::span<const double> gy, std::span<const double> w,
                        std::span<double> gx) {
  std::fill(gx.begin(), gx.end(), 0.0);
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t ot = 0; ot < g.out[0]; ++ot)
      for (std::size_t oh = 0; oh < g.out[1]; ++oh)
        for (std::size_t ow = 0; ow < g.out[2]; ++ow)
          for (std::size_t co = 0; co < g.cout; ++co)
            for (std::size_t kt = 0; kt < g.kernel[0]; ++kt)
              for (std::size_t kh = 0; kh < g.kernel[1]; ++kh)
                for (std::size_t kw = 0; kw < g.kernel[2]; ++kw)
                  for (std::size_t ci = 0; ci < g.cin; ++ci) {
                    const Index it = source(ot, kt, g.stride[0], g.pad[0], g.in[0]);
                    const Index ih = source(oh, kh, g.stride[1], g.pad[1], g.in[1]);
                    const Index iw = source(ow, kw, g.stride[2], g.pad[2], g.in[2]);
                    if (it < 0 || ih < 0 || iw < 0) continue;
                    gx[in_offset(g, n, it, ih, iw) + ci] +=
                        gy[out_offset(g, n, ot, oh, ow) + co] * w[weight_offset(g, kt, kh, kw) + ci * g.cout + co];
                  }
}

void conv_backward_filter(const ConvGeometry& g, std::span<const double> x, std::span<const double> gy,
                          std::span<double> gw) {
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t ot = 0; ot < g.out[0]; ++ot)
      for (std::size_t oh = 0; oh < g.out[1]; ++oh)
        for (std::size_t ow = 0; ow < g.out[2]; ++ow)
          for (std::size_t co = 0; co < g.cout; ++co)
            for (std::size_t kt = 0; kt < g.kernel[0]; ++kt)
              for (std::size_t kh = 0; kh < g.kernel[1]; ++kh)
                for (std::size_t kw = 0; kw < g.kernel[2]; ++kw)
                  for (std::size_t ci = 0; ci < g.cin; ++ci) {
                    const Index it = source(ot, kt, g.stride[0], g.pad[0], g.in[0]);
                    const Index ih = source(oh, kh, g.stride[1], g.pad[1], g.in[1]);
                    const Index iw = source(ow, kw, g.stride[2], g.pad[2], g.in[2]);
                    if (it < 0 || ih < 0 || iw < 0) continue;
                    gw[weight_offset(g, kt, kh, kw) + ci * g.cout + co] +=
                        x[in_offset(g, n, it, ih, iw) + ci] * gy[out_offset(g, n, ot, oh, ow) + co];
                  }
}

void bias_backward(std::span<const double> gy, std::size_t channels, std::span<double> gb) {
  for (std::size_t i = 0; i < gy.size(); ++i) gb[i % channels] += gy[i];
}

}  // namespace reference

void set_threads(int n) { omp_set_num_threads(std::max(1, n)); }

int threads() { return omp_get_max_threads(); }

}  // namespace nowcast::kernels
