#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <numbers>

#include "nowcast/errors.hpp"
#include "nowcast/grid.hpp"

using namespace nowcast;

namespace {

Sequence zero_sequence(std::size_t T, std::size_t H, std::size_t W) {
  Sequence s;
  for (std::size_t t = 0; t < T; ++t) s.frames.emplace_back(H, W, static_cast<std::int64_t>(t) * s.dt_seconds);
  return s;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("nowcast_test_" + name);
}

}  // namespace

TEST_SUITE("grid") {
  TEST_CASE("one all-zero 2x2 frame encodes to a 24-byte header and 16 zero bytes") {
    const auto bytes = encode_sequence(zero_sequence(1, 2, 2));
    REQUIRE(bytes.size() == 40);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "NCG1");
    for (std::size_t i = 24; i < 40; ++i) CHECK(bytes[i] == 0);
    const Sequence back = decode_sequence(bytes);
    REQUIRE(back.size() == 1);
    CHECK(back.frames[0].values == std::vector<float>(4, 0.0f));
  }

  TEST_CASE("file round trip is byte exact") {
    SynthConfig cfg;
    cfg.height = 12;
    cfg.width = 10;
    cfg.n_frames = 7;
    cfg.noise_std = 0.3;
    cfg.seed = 11;
    const Sequence seq = synthesize(cfg);
    const auto path = temp_file("roundtrip.ncg");
    write_sequence(seq, path);
    const Sequence back = read_sequence(path);
    CHECK(back == seq);
    CHECK(encode_sequence(back) == encode_sequence(seq));
    std::filesystem::remove(path);
  }

  TEST_CASE("header promising more frames than the payload holds is a length error") {
    auto bytes = encode_sequence(zero_sequence(5, 2, 2));
    bytes.resize(bytes.size() - 16);
    CHECK_THROWS_AS(decode_sequence(bytes), LengthError);
  }

  TEST_CASE("bad magic and version are format errors") {
    auto bytes = encode_sequence(zero_sequence(1, 2, 2));
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_sequence(bad), FormatError);
    bad = bytes;
    bad[4] = 2;
    CHECK_THROWS_AS(decode_sequence(bad), FormatError);
  }

  TEST_CASE("NaN payload is a data error naming the frame") {
    auto bytes = encode_sequence(zero_sequence(3, 2, 2));
    const float nan = std::nanf("");
    std::memcpy(bytes.data() + 24 + 2 * 16 + 4, &nan, 4);
    try {
      decode_sequence(bytes);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("frame 2") != std::string::npos);
    }
  }

  TEST_CASE("mismatched frame sizes are rejected before writing") {
    Sequence s = zero_sequence(2, 2, 2);
    s.frames[1] = GridFrame(3, 2, s.dt_seconds);
    const auto path = temp_file("never_written.ncg");
    std::filesystem::remove(path);
    CHECK_THROWS_AS(write_sequence(s, path), DimensionError);
    CHECK_FALSE(std::filesystem::exists(path));
  }

  TEST_CASE("window counts follow the closed form") {
    CHECK(window(zero_sequence(12, 2, 2), {}).size() == 1);
    const auto w = window(zero_sequence(14, 2, 2), {});
    REQUIRE(w.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(w[i].start == i);
    CHECK(window(zero_sequence(11, 2, 2), {}).empty());
    for (std::size_t T = 12; T < 30; ++T) {
      for (std::size_t stride = 1; stride <= 4; ++stride) {
        CHECK(window(zero_sequence(T, 1, 1), {9, 3, stride}).size() == (T - 12) / stride + 1);
      }
    }
  }

  TEST_CASE("windows cover every frame and targets follow inputs") {
    SynthConfig cfg;
    cfg.height = cfg.width = 4;
    cfg.n_frames = 17;
    const Sequence seq = synthesize(cfg);
    const auto w = window(seq, {});
    std::vector<int> seen(seq.size(), 0);
    for (const auto& s : w) {
      CHECK(s.input.back().timestamp + seq.dt_seconds == s.target.front().timestamp);
      for (const auto& f : s.input) ++seen[static_cast<std::size_t>(f.timestamp / seq.dt_seconds)];
      for (const auto& f : s.target) ++seen[static_cast<std::size_t>(f.timestamp / seq.dt_seconds)];
    }
    for (int n : seen) CHECK(n >= 1);
  }

  TEST_CASE("synthesize is deterministic and zero without cells or noise") {
    SynthConfig cfg;
    cfg.height = 16;
    cfg.width = 20;
    cfg.n_frames = 5;
    cfg.noise_std = 0.5;
    cfg.seed = 3;
    CHECK(synthesize(cfg) == synthesize(cfg));
    cfg.n_cells = 0;
    cfg.noise_std = 0;
    for (const auto& f : synthesize(cfg).frames) {
      for (float v : f.values) CHECK(v == 0.0f);
    }
  }

  TEST_CASE("a drifting cell matches the closed-form Gaussian at shifted centres") {
    SynthConfig cfg;
    cfg.height = cfg.width = 40;
    cfg.n_frames = 6;
    cfg.n_cells = 1;
    cfg.velocity_range = {1.0, 1.0};
    cfg.heading_range = {0.0, 0.0};
    cfg.growth_rate_range = {0.0, 0.0};
    cfg.angular_rate_range = {0.0, 0.0};
    cfg.seed = 5;
    const Sequence seq = synthesize(cfg);
    const SynthCell c = synth_cells(cfg).front();
    CHECK(c.v_col == doctest::Approx(1.0));
    const double ca = std::cos(c.angle), sa = std::sin(c.angle);
    for (std::size_t t = 0; t < cfg.n_frames; ++t) {
      for (std::size_t r = 0; r < cfg.height; ++r) {
        for (std::size_t col = 0; col < cfg.width; ++col) {
          double dy = static_cast<double>(r) - c.row;
          double dx = static_cast<double>(col) - (c.col + static_cast<double>(t));
          dy -= 40.0 * std::round(dy / 40.0);
          dx -= 40.0 * std::round(dx / 40.0);
          const double u = ca * dx + sa * dy, v = -sa * dx + ca * dy;
          const double expected = c.amplitude * std::exp(-0.5 * (u * u / (c.sigma_major * c.sigma_major) +
                                                                 v * v / (c.sigma_minor * c.sigma_minor)));
          CHECK(std::abs(seq.frames[t](r, col) - expected) <= 1e-5);
        }
      }
      if (t > 0) {
        // Translation: frame t at column j equals frame 0 at column j - t.
        for (std::size_t r = 0; r < cfg.height; ++r) {
          for (std::size_t col = t; col < cfg.width; ++col) {
            CHECK(std::abs(seq.frames[t](r, col) - seq.frames[0](r, col - t)) <= 1e-5);
          }
        }
      }
    }
  }

  TEST_CASE("transform values, cap and inverse") {
    CHECK(transform(0.0) == 0.0);
    CHECK(inverse_transform(0.0) == 0.0);
    CHECK(transform(std::numbers::e - 1.0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(transform(250.0) == std::log(101.0));
    CHECK(inverse_transform(transform(250.0)) == doctest::Approx(100.0).epsilon(1e-12));
    CHECK(inverse_transform(-0.5) == 0.0);
    CHECK_THROWS_AS(transform(-1e-9), DataError);
    CHECK_THROWS_AS(transform(std::nan("")), DataError);
    double prev = -1.0;
    for (int i = 0; i <= 10000; ++i) {
      const double x = i * 0.01;
      const double y = transform(x);
      CHECK(y > prev);
      prev = y;
      CHECK(std::abs(inverse_transform(y) - x) <= 1e-6);
    }
  }

  TEST_CASE("tensor bridges keep model-space values") {
    SynthConfig cfg;
    cfg.height = 6;
    cfg.width = 5;
    cfg.n_frames = 12;
    cfg.seed = 2;
    const Sequence seq = synthesize(cfg);
    const auto w = window(seq, {});
    const Tensor x = batch_inputs(w);
    REQUIRE(x.shape() == Shape{1, 9, 6, 5, 1});
    CHECK(x.at(0, 8, 3, 2, 0) == transform(seq.frames[8](3, 2)));
    const Tensor y = batch_targets(w);
    CHECK(y.at(0, 0, 1, 1, 0) == transform(seq.frames[9](1, 1)));
    const auto back = tensor_to_frames(x, 0);
    for (std::size_t t = 0; t < 9; ++t) {
      for (std::size_t i = 0; i < 30; ++i) CHECK(back[t].values[i] == doctest::Approx(seq.frames[t].values[i]).epsilon(1e-6));
    }
  }
}
