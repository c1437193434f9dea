#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace maskdiff {

// Deterministic random stream. A stream is identified by (seed, stream id);
// distinct ids give independent sequences, so every consumer can derive its
// own substream without sharing state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0) : seed_(seed), stream_(stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                      0x6d61736bU};
    engine_.seed(seq);
  }

  // Child stream; children of different parents never collide because the
  // parent's stream id is folded into the child's.
  Rng split(std::uint64_t child) const {
    return Rng(seed_, stream_ * 0x9E3779B97F4A7C15ULL + child + 1);
  }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on the open interval (0,1).
  double uniform() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Uniform on [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Approximately standard normal via Box-Muller; used only for test fixtures
  // and parameter initialisation, never inside an estimator.
  double normal() {
    constexpr double kTwoPi = 6.283185307179586476925286766559;
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
  }

  std::uint64_t below(std::uint64_t n) { return n ? next_u64() % n : 0; }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
};

}  // namespace maskdiff
