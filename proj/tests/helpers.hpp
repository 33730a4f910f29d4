#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "nowcast/grid.hpp"
#include "nowcast/rng.hpp"

namespace nowcast::testing {

inline Sequence make_sequence(std::size_t frames, std::size_t h, std::size_t w,
                              const std::function<double(std::size_t, std::size_t, std::size_t)>& rate) {
  Sequence seq;
  for (std::size_t t = 0; t < frames; ++t) {
    GridFrame f(h, w, static_cast<std::int64_t>(t) * seq.dt_seconds);
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) f(r, c) = static_cast<float>(rate(t, r, c));
    }
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

inline Sequence random_sequence(std::size_t frames, std::size_t h, std::size_t w, std::uint64_t seed,
                                double wet_fraction = 0.5) {
  Rng rng(seed, 5);
  return make_sequence(frames, h, w, [&](std::size_t, std::size_t, std::size_t) {
    return rng.uniform() < wet_fraction ? rng.uniform(0.0, 15.0) : 0.0;
  });
}

inline SynthConfig small_synth(std::size_t hw, std::size_t frames, std::uint64_t seed) {
  SynthConfig cfg;
  cfg.height = cfg.width = hw;
  cfg.n_frames = frames;
  cfg.n_cells = 2;
  cfg.sigma_range = {2.0, 4.0};
  cfg.seed = seed;
  return cfg;
}

}  // namespace nowcast::testing
