#include "sdppe/environment.hpp"

#include <cmath>
#include <span>

#include "sdppe/error.hpp"

namespace sdppe {

void RiverSwimParams::validate() const {
  if (n_states < 2) throw DomainError("riverswim: n_states must be at least 2");
  if (horizon < 1) throw DomainError("riverswim: horizon must be positive");
  for (double p : {p_right_success, p_right_stay, p_right_back}) {
    if (!(p >= 0.0 && p <= 1.0)) throw DomainError("riverswim: probability outside [0, 1]");
  }
  if (std::abs(p_right_success + p_right_stay + p_right_back - 1.0) > 1e-9) {
    throw DomainError("riverswim: right-action probabilities must sum to 1");
  }
  if (!(r_left_mean >= 0.0 && r_left_mean <= 1.0 && r_right_mean >= 0.0 && r_right_mean <= 1.0)) {
    throw DomainError("riverswim: reward means must lie in [0, 1]");
  }
  if (!(r_left_mean < r_right_mean)) {
    throw DomainError("riverswim: r_left_mean must be below r_right_mean");
  }
}

MdpSpec riverswim(const RiverSwimParams& params) {
  params.validate();
  const int S = params.n_states;
  const int H = params.horizon;
  MdpSpec spec{TransitionModel(S, 2, H), RewardFunction(S, 2, H), Eigen::VectorXd::Zero(S)};
  spec.initial(0) = 1.0;
  for (int h = 0; h < H; ++h) {
    Eigen::MatrixXd& left = spec.transitions.kernel(h, kLeft);
    Eigen::MatrixXd& right = spec.transitions.kernel(h, kRight);
    for (int s = 0; s < S; ++s) {
      left(s, s == 0 ? 0 : s - 1) = 1.0;
      if (s == S - 1) {
        right(s, s) += params.p_right_success;
        right(s, s - 1) += params.p_right_stay + params.p_right_back;
      } else {
        right(s, s + 1) += params.p_right_success;
        right(s, s) += params.p_right_stay;
        right(s, s == 0 ? 0 : s - 1) += params.p_right_back;
      }
    }
    spec.rewards.at(h)(0, kLeft) = params.r_left_mean;
    spec.rewards.at(h)(S - 1, kRight) = params.r_right_mean;
  }
  return spec;
}

RiverSwimParams riverswim_small_params() {
  RiverSwimParams p;
  p.n_states = 3;
  p.horizon = 3;
  return p;
}

Trajectory run_episode(const MdpSpec& spec, const DeterministicPolicy& policy, Rng& rng) {
  const int S = spec.num_states();
  if (policy.num_states() != S || policy.horizon() != spec.horizon()) {
    throw DimensionError("policy shape does not match environment");
  }
  Trajectory out;
  out.steps.reserve(static_cast<std::size_t>(spec.horizon()));
  int state = static_cast<int>(
      sample_index(rng, std::span<const double>(spec.initial.data(), spec.initial.size())));
  for (int h = 0; h < spec.horizon(); ++h) {
    const int action = policy.action(h, state);
    Step step;
    step.state = state;
    step.action = action;
    step.reward = bernoulli(rng, spec.rewards(h, state, action)) ? 1 : 0;
    // Rows of a column-major matrix are strided; copy before sampling.
    const Eigen::VectorXd row = spec.transitions.kernel(h, action).row(state).transpose();
    step.next_state =
        static_cast<int>(sample_index(rng, std::span<const double>(row.data(), row.size())));
    out.steps.push_back(step);
    state = step.next_state;
  }
  return out;
}

Trajectory run_episode(const MdpSpec& spec, const PolicyMixture& policy, Rng& rng) {
  const std::size_t pick = policy.components.size() == 1
                               ? 0
                               : sample_index(rng, std::span<const double>(policy.weights));
  return run_episode(spec, policy.components[pick], rng);
}

}  // namespace sdppe
