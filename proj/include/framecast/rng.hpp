#pragma once

#include <cstdint>
#include <random>

namespace framecast {

// std::mt19937 is fully specified by the standard, so every draw sequence
// below is reproducible across compilers. Floats are derived from raw bits
// directly because the std distributions are implementation-defined.

using Rng = std::mt19937;

template <typename Real>
Real unit_real(Rng& g);

/// [0,1) with 24 bits of resolution.
template <>
inline float unit_real<float>(Rng& g) {
  return static_cast<float>(g() >> 8) * (1.0f / 16777216.0f);
}

/// [0,1) with 53 bits of resolution.
template <>
inline double unit_real<double>(Rng& g) {
  const std::uint64_t hi = g() >> 5;   // 27 bits
  const std::uint64_t lo = g() >> 6;   // 26 bits
  return static_cast<double>((hi << 26) | lo) * (1.0 / 9007199254740992.0);
}

template <typename Real>
Real uniform_real(Rng& g, Real lo, Real hi) {
  return lo + (hi - lo) * unit_real<Real>(g);
}

}  // namespace framecast
