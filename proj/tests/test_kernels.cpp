#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "nowcast/kernels.hpp"
#include "nowcast/models.hpp"
#include "nowcast/rng.hpp"

using namespace nowcast;
using kernels::ConvGeometry;

namespace {

std::vector<double> noise(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

std::size_t out_dim(std::size_t in, std::size_t k, std::size_t s, std::size_t p) { return (in + 2 * p - k) / s + 1; }

ConvGeometry random_geometry(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, 1000);
  ConvGeometry g;
  g.batch = 1 + pick(rng) % 3;
  const std::size_t cins[] = {1, 2, 3, 4, 8, 16, 32, 5};
  g.cin = cins[pick(rng) % 8];
  g.cout = 1 + pick(rng) % 9;
  for (int a = 0; a < 3; ++a) {
    g.kernel[a] = 1 + pick(rng) % 3;
    g.stride[a] = 1 + pick(rng) % 3;
    g.pad[a] = pick(rng) % g.kernel[a];
    g.in[a] = g.kernel[a] + pick(rng) % 9;
    g.out[a] = out_dim(g.in[a], g.kernel[a], g.stride[a], g.pad[a]);
  }
  return g;
}

double max_rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double scale = 1e-300, d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    scale = std::max(scale, std::abs(b[i]));
    d = std::max(d, std::abs(a[i] - b[i]));
  }
  return d / scale;
}

constexpr double kAgreementTol = 1e-12;

}  // namespace

TEST_SUITE("kernels") {
  TEST_CASE("parallel kernels agree with the reference loops") {
    std::mt19937_64 rng(17);
    for (int inst = 0; inst < 150; ++inst) {
      const ConvGeometry g = random_geometry(rng);
      CAPTURE(inst);
      const auto x = noise(g.in_size(), rng), w = noise(g.weight_size(), rng), b = noise(g.cout, rng);
      const auto gy = noise(g.out_size(), rng);
      std::vector<double> y1(g.out_size()), y2(g.out_size());
      kernels::parallel::conv_forward(g, x, w, b, y1);
      kernels::reference::conv_forward(g, x, w, b, y2);
      CHECK(max_rel_diff(y1, y2) <= kAgreementTol);

      std::vector<double> gx1(g.in_size(), 7.0), gx2(g.in_size(), -3.0);
      kernels::parallel::conv_backward_data(g, gy, w, gx1);
      kernels::reference::conv_backward_data(g, gy, w, gx2);
      CHECK(max_rel_diff(gx1, gx2) <= kAgreementTol);

      std::vector<double> gw1(g.weight_size(), 0.5), gw2(g.weight_size(), 0.5);
      kernels::parallel::conv_backward_filter(g, x, gy, gw1);
      kernels::reference::conv_backward_filter(g, x, gy, gw2);
      CHECK(max_rel_diff(gw1, gw2) <= kAgreementTol);

      std::vector<double> gb1(g.cout, 1.0), gb2(g.cout, 1.0);
      kernels::parallel::bias_backward(gy, g.cout, gb1);
      kernels::reference::bias_backward(gy, g.cout, gb2);
      CHECK(max_rel_diff(gb1, gb2) <= kAgreementTol);
    }
  }

  TEST_CASE("kernel results do not depend on the thread count") {
    std::mt19937_64 rng(23);
    const int saved = kernels::threads();
    for (int inst = 0; inst < 20; ++inst) {
      ConvGeometry g = random_geometry(rng);
      g.batch = 4;
      const auto x = noise(g.in_size(), rng), w = noise(g.weight_size(), rng), b = noise(g.cout, rng);
      const auto gy = noise(g.out_size(), rng);
      std::vector<std::vector<double>> ys, gxs, gws, gbs;
      for (int threads : {1, 3, 4}) {
        kernels::set_threads(threads);
        std::vector<double> y(g.out_size()), gx(g.in_size()), gw(g.weight_size()), gb(g.cout);
        kernels::parallel::conv_forward(g, x, w, b, y);
        kernels::parallel::conv_backward_data(g, gy, w, gx);
        kernels::parallel::conv_backward_filter(g, x, gy, gw);
        kernels::parallel::bias_backward(gy, g.cout, gb);
        ys.push_back(y);
        gxs.push_back(gx);
        gws.push_back(gw);
        gbs.push_back(gb);
      }
      for (std::size_t k = 1; k < ys.size(); ++k) {
        CHECK(ys[k] == ys[0]);
        CHECK(gxs[k] == gxs[0]);
        CHECK(gws[k] == gws[0]);
        CHECK(gbs[k] == gbs[0]);
      }
    }
    kernels::set_threads(saved);
  }

  TEST_CASE("a whole training step is thread-count independent") {
    const int saved = kernels::threads();
    std::vector<std::vector<double>> grads;
    for (int threads : {1, 4}) {
      kernels::set_threads(threads);
      ModelConfig mc;
      mc.kind = ModelKind::CNC_D;
      mc.height = mc.width = 16;
      mc.base_channels = 4;
      mc.seed = 5;
      Model m(mc);
      Rng rng(9);
      Tensor x({3, 9, 16, 16, 1});
      for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform();
      ModelTape tape;
      const Tensor y = m.forward(x, Mode::Train, tape);
      m.backward(y, tape);
      std::vector<double> all(y.storage());
      for (auto* p : m.params()) all.insert(all.end(), p->grad.storage().begin(), p->grad.storage().end());
      grads.push_back(std::move(all));
    }
    CHECK(grads[0] == grads[1]);
    kernels::set_threads(saved);
  }
}
