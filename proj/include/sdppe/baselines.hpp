#pragma once

// Comparison algorithms: policy elimination without privacy, and UCB-VI with
// optional Laplace-noised counts. The private UCB-VI variants are simplified
// stand-ins (noisy counts fed to the same Hoeffding-bonus planner), not
// reimplementations of any published private UCB-VI.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "sdppe/mdp.hpp"
#include "sdppe/rng.hpp"
#include "sdppe/sdp_pe.hpp"

namespace sdppe {

enum class Algorithm { kSdpPe, kPe, kUcbvi, kUcbviLdp, kUcbviJdp };

/// "sdp-pe", "pe", "ucbvi", "ucbvi-ldp", "ucbvi-jdp".
std::string_view algorithm_name(Algorithm algorithm);
/// Throws ConfigError on an unknown tag.
Algorithm parse_algorithm(std::string_view tag);
bool is_private(Algorithm algorithm);

/// Policy elimination with exact counts (K = 0, no shift).
SdpPeResult run_pe_nonprivate(const MdpSpec& env, std::int64_t T, std::uint64_t seed,
                              const SdpPeOptions& options = {});

enum class CountNoise {
  kNone,
  kLocal,    // every user perturbs each of its counter contributions
  kCentral,  // one fresh perturbation of each cumulative counter per episode
};

struct UcbviOptions {
  double bonus_scale = 1.0;
  double delta = 0.05;
  CountNoise noise = CountNoise::kNone;
  double epsilon = 1.0;  // used only with noise
  bool record_optimism = false;

  /// 6H / epsilon: the per-episode budget split over visits, successors and
  /// rewards, each contributing at most H to the L1 sensitivity.
  double laplace_scale(int horizon) const;
  void validate() const;
};

struct UcbviResult {
  RegretTrace trace;
  std::vector<double> optimistic_value;  // sum_s d1(s) Vbar_1(s) per episode, if recorded
};

/// Hoeffding-bonus value iteration, re-planned before every episode.
/// bonus(h,s,a) = bonus_scale * sqrt(2 ln(2 S A H T / delta) / max(1, N(h,s,a))),
/// Q clipped at the remaining horizon. Noisy counts are clamped at zero before
/// estimation; an empty row plans with the maximal value.
UcbviResult run_ucbvi(const MdpSpec& env, std::int64_t T, const UcbviOptions& options,
                      std::uint64_t seed);

/// Laplace(0, b) draw from the open unit interval (finite for every engine output).
double laplace(Rng& rng, double b);

}  // namespace sdppe
