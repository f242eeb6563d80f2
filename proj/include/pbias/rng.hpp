#pragma once

// Seeded random streams. Each Monte Carlo trial owns a stream derived from
// (seed, scenario, cell, trial), so results do not depend on scheduling.
//
// The engine and seed_seq are fully specified by the standard; the variate
// transforms below are written out so that output is identical across
// standard library implementations.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace pbias {

class RandomStream {
 public:
  explicit RandomStream(std::seed_seq& seq) : engine_(seq) {}

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller (one variate per call).
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

inline RandomStream derive_stream(std::uint64_t seed, std::uint32_t scenario, std::uint64_t cell,
                                  std::uint64_t trial) {
  const auto lo = [](std::uint64_t v) { return static_cast<std::uint32_t>(v & 0xffffffffu); };
  const auto hi = [](std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); };
  std::seed_seq seq{lo(seed), hi(seed), scenario, lo(cell), hi(cell), lo(trial), hi(trial)};
  return RandomStream(seq);
}

}  // namespace pbias
