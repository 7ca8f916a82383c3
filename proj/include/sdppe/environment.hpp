#pragma once

#include <cstdint>
#include <vector>

#include "sdppe/mdp.hpp"
#include "sdppe/rng.hpp"

namespace sdppe {

/// One step of an episode. `next_state` is also recorded for the final step,
/// since p_H is part of the model and its counts feed the per-step totals.
struct Step {
  int state = 0;
  int action = 0;
  int reward = 0;  // 0 or 1
  int next_state = 0;
};

struct Trajectory {
  std::vector<Step> steps;
  std::int64_t episode_index = 0;
  std::int64_t user_id = 0;
};

inline constexpr int kLeft = 0;
inline constexpr int kRight = 1;

/// RiverSwim chain. "left" always succeeds. "right" from an interior state
/// moves right / stays / moves left with the given triple; from the leftmost
/// state the back-slip also stays; at the rightmost state it stays with
/// `p_right_success` and otherwise slips left.
struct RiverSwimParams {
  int n_states = 4;
  int horizon = 6;
  double p_right_success = 0.6;
  double p_right_stay = 0.3;
  double p_right_back = 0.1;
  double r_left_mean = 0.005;  // taking "left" at the leftmost state
  double r_right_mean = 1.0;   // taking "right" at the rightmost state

  void validate() const;
};

/// Episodes start at the leftmost state.
MdpSpec riverswim(const RiverSwimParams& params);

/// The S = 3, H = 3 variant used for the desk-scale experiments (512 policies).
RiverSwimParams riverswim_small_params();

Trajectory run_episode(const MdpSpec& spec, const DeterministicPolicy& policy, Rng& rng);

/// Draws one component by weight, then runs it.
Trajectory run_episode(const MdpSpec& spec, const PolicyMixture& policy, Rng& rng);

}  // namespace sdppe
