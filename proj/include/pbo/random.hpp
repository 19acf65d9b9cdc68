#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace pbo {

inline constexpr double kTwoPi = 6.283185307179586476925286766559;

// Deterministic random stream with a fixed word-consumption contract:
// uniform() consumes one engine word, normal() exactly two. Keeping the
// consumption explicit makes sampling sequences reproducible regardless of
// platform or library version, which the reproducibility guarantees rely on.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Raw engine word, used to derive child seeds.
  std::uint64_t raw() { return engine_(); }

  // Uniform on [0, 1) with 53-bit resolution.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Standard normal via the Box-Muller cosine branch. log1p(-u) keeps the
  // argument strictly positive since uniform() can return exactly 0.
  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log1p(-u1)) * std::cos(kTwoPi * u2);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace pbo
