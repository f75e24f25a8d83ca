#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace nos {

/// Deterministic RNG wrapper. All variate transforms are written out
/// explicitly so that draw sequences depend only on the engine state,
/// not on standard-library distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  /// Independent substream for (seed, stream), e.g. one per chain or
  /// replicate. Streams are decorrelated by splitmix64 mixing.
  static Rng substream(std::uint64_t seed, std::uint64_t stream) {
    return Rng(splitmix64(seed + 0x9e3779b97f4a7c15ull * (stream + 1)));
  }

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform on (0, 1); never returns an endpoint.
  double uniform() {
    return (static_cast<double>(gen_() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo + 1);
    return lo + static_cast<std::int64_t>(gen_() % span);
  }

  /// Standard normal via Box-Muller (two uniforms per draw, no cache).
  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mu, double sd) { return mu + sd * normal(); }

  /// Half-Cauchy(0, 1) via the inverse CDF.
  double half_cauchy() { return std::tan(0.5 * M_PI * uniform()); }

  static std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace nos
