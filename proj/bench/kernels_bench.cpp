#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "nowcast/kernels.hpp"

namespace {

using nowcast::kernels::ConvGeometry;

// Encoder-style layer: batch 8, 9 frames at 64x64, 3x3x3 kernel, same padding.
ConvGeometry layer(std::size_t cin, std::size_t cout) {
  ConvGeometry g;
  g.batch = 8;
  g.in = {9, 64, 64};
  g.out = {9, 64, 64};
  g.kernel = {3, 3, 3};
  g.pad = {1, 1, 1};
  g.cin = cin;
  g.cout = cout;
  return g;
}

std::vector<double> noise(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

struct Buffers {
  ConvGeometry g;
  std::vector<double> x, w, b, y;

  explicit Buffers(const ConvGeometry& geom)
      : g(geom), x(noise(g.in_size(), 1)), w(noise(g.weight_size(), 2)), b(noise(g.cout, 3)), y(g.out_size()) {}
};

double conv_flops(const ConvGeometry& g) {
  return 2.0 * static_cast<double>(g.out_size()) * static_cast<double>(g.kernel[0] * g.kernel[1] * g.kernel[2] * g.cin);
}

template <auto Fn>
void forward(benchmark::State& state) {
  Buffers buf(layer(state.range(0), state.range(1)));
  for (auto _ : state) {
    Fn(buf.g, buf.x, buf.w, buf.b, buf.y);
    benchmark::DoNotOptimize(buf.y.data());
  }
  state.counters["GFLOP/s"] =
      benchmark::Counter(conv_flops(buf.g) * 1e-9, benchmark::Counter::kIsIterationInvariantRate);
}

template <auto Fn>
void backward_data(benchmark::State& state) {
  Buffers buf(layer(state.range(0), state.range(1)));
  std::vector<double> gx(buf.g.in_size());
  for (auto _ : state) {
    Fn(buf.g, buf.y, buf.w, gx);
    benchmark::DoNotOptimize(gx.data());
  }
  state.counters["GFLOP/s"] =
      benchmark::Counter(conv_flops(buf.g) * 1e-9, benchmark::Counter::kIsIterationInvariantRate);
}

template <auto Fn>
void backward_filter(benchmark::State& state) {
  Buffers buf(layer(state.range(0), state.range(1)));
  std::vector<double> gw(buf.g.weight_size());
  for (auto _ : state) {
    Fn(buf.g, buf.x, buf.y, gw);
    benchmark::DoNotOptimize(gw.data());
  }
  state.counters["GFLOP/s"] =
      benchmark::Counter(conv_flops(buf.g) * 1e-9, benchmark::Counter::kIsIterationInvariantRate);
}

namespace par = nowcast::kernels::parallel;
namespace ref = nowcast::kernels::reference;

void shapes(benchmark::internal::Benchmark* b) {
  b->Args({1, 8})->Args({8, 8})->Args({16, 16})->Unit(benchmark::kMillisecond);
}

}  // namespace

BENCHMARK(forward<par::conv_forward>)->Name("conv_forward/parallel")->Apply(shapes);
BENCHMARK(forward<ref::conv_forward>)->Name("conv_forward/reference")->Apply(shapes);
BENCHMARK(backward_data<par::conv_backward_data>)->Name("conv_backward_data/parallel")->Apply(shapes);
BENCHMARK(backward_data<ref::conv_backward_data>)->Name("conv_backward_data/reference")->Apply(shapes);
BENCHMARK(backward_filter<par::conv_backward_filter>)->Name("conv_backward_filter/parallel")->Apply(shapes);
BENCHMARK(backward_filter<ref::conv_backward_filter>)->Name("conv_backward_filter/reference")->Apply(shapes);

BENCHMARK_MAIN();
