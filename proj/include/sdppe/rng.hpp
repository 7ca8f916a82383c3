#pragma once

#include <bit>
#include <cstdint>
#include <random>
#include <span>

namespace sdppe {

using Rng = std::mt19937_64;

// Named streams so that environment randomness and protocol randomness never
// share an engine.
enum class Stream : std::uint64_t {
  kEpisode = 1,
  kProtocol = 2,
  kMixture = 3,
  kBaselineNoise = 4,
};

/// Deterministic engine for (seed, stream, index). Engines for different
/// triples are statistically independent.
inline Rng make_stream(std::uint64_t seed, Stream stream, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

/// Uniform double in [0, 1) built from the top 53 bits; identical on every
/// platform, unlike std::uniform_real_distribution.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

/// Inverse-CDF draw from an unnormalised-safe probability vector. The last
/// index with positive mass absorbs rounding.
inline std::size_t sample_index(Rng& rng, std::span<const double> probs) {
  const double u = uniform01(rng);
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    last = i;
    acc += probs[i];
    if (u < acc) return i;
  }
  return last;
}

/// Sum of `m` fair coin flips, drawn 64 bits at a time.
inline std::int64_t binomial_half(Rng& rng, std::int64_t m) {
  std::int64_t total = 0;
  while (m >= 64) {
    total += std::popcount(rng());
    m -= 64;
  }
  if (m > 0) total += std::popcount(rng() >> (64 - m));
  return total;
}

}  // namespace sdppe
