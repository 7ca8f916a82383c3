#pragma once

// Shared fixtures and independent reference computations for the tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "sdppe/environment.hpp"
#include "sdppe/mdp.hpp"
#include "sdppe/rng.hpp"
#include "sdppe/sdp_pe.hpp"

namespace sdppe::testing {

/// Dirichlet(1)-like random kernel rows and uniform reward means in [0, 1].
inline MdpSpec random_mdp(int S, int A, int H, Rng& rng, double reward_density = 1.0) {
  MdpSpec spec{TransitionModel(S, A, H), RewardFunction(S, A, H), Eigen::VectorXd::Zero(S)};
  for (int h = 0; h < H; ++h) {
    for (int a = 0; a < A; ++a) {
      for (int s = 0; s < S; ++s) {
        double total = 0.0;
        for (int s2 = 0; s2 < S; ++s2) {
          const double e = -std::log(1.0 - uniform01(rng));
          spec.transitions.kernel(h, a)(s, s2) = e;
          total += e;
        }
        spec.transitions.kernel(h, a).row(s) /= total;
        spec.rewards.at(h)(s, a) = uniform01(rng) < reward_density ? uniform01(rng) : 0.0;
      }
    }
  }
  double total = 0.0;
  for (int s = 0; s < S; ++s) {
    spec.initial(s) = 0.1 + uniform01(rng);
    total += spec.initial(s);
  }
  spec.initial /= total;
  return spec;
}

/// Expected return by walking every trajectory prefix explicitly (no
/// memoisation across states).
inline double brute_force_value(const MdpSpec& spec, const DeterministicPolicy& pi) {
  const int S = spec.num_states();
  const int H = spec.horizon();
  std::function<double(int, int)> walk = [&](int h, int s) -> double {
    if (h == H) return 0.0;
    const int a = pi.action(h, s);
    double v = spec.rewards(h, s, a);
    for (int s2 = 0; s2 < S; ++s2) {
      const double p = spec.transitions.prob(h, s, a, s2);
      if (p > 0.0) v += p * walk(h + 1, s2);
    }
    return v;
  };
  double total = 0.0;
  for (int s = 0; s < S; ++s) total += spec.initial(s) * walk(0, s);
  return total;
}

/// Expectimax over the whole trajectory tree.
inline double brute_force_optimum(const MdpSpec& spec) {
  const int S = spec.num_states();
  const int A = spec.num_actions();
  const int H = spec.horizon();
  std::function<double(int, int)> walk = [&](int h, int s) -> double {
    if (h == H) return 0.0;
    double best = -1.0;
    for (int a = 0; a < A; ++a) {
      double v = spec.rewards(h, s, a);
      for (int s2 = 0; s2 < S; ++s2) {
        const double p = spec.transitions.prob(h, s, a, s2);
        if (p > 0.0) v += p * walk(h + 1, s2);
      }
      best = std::max(best, v);
    }
    return best;
  };
  double total = 0.0;
  for (int s = 0; s < S; ++s) total += spec.initial(s) * walk(0, s);
  return total;
}

inline DeterministicPolicy constant_policy(int S, int H, int action) {
  return DeterministicPolicy(S, H, action);
}

// Independent feasibility check for the repair LP at a given t.
inline bool repair_feasible(const Eigen::VectorXd& noisy, double total, double kappa, double t) {
  double lo = 0.0, hi = 0.0;
  for (Eigen::Index i = 0; i < noisy.size(); ++i) {
    if (noisy(i) + t < 0.0) return false;
    lo += std::max(0.0, noisy(i) - t);
    hi += noisy(i) + t;
  }
  return lo <= total + kappa && hi >= total - kappa;
}

inline double bisect_repair(const Eigen::VectorXd& noisy, double total, double kappa) {
  if (repair_feasible(noisy, total, kappa, 0.0)) return 0.0;
  double lo = 0.0;
  double hi = 1.0 + noisy.cwiseAbs().sum() + std::abs(total) + kappa;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (repair_feasible(noisy, total, kappa, mid) ? hi : lo) = mid;
  }
  return hi;
}

// Coverage on an explicit grid of weights (resolution 1/res).
inline double grid_coverage(const Eigen::MatrixXd& occ, int res) {
  const int m = static_cast<int>(occ.cols());
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> k(static_cast<std::size_t>(m), 0);
  std::function<void(int, int)> rec = [&](int i, int left) {
    if (i == m - 1) {
      k[static_cast<std::size_t>(i)] = left;
      Eigen::VectorXd w(m);
      for (int j = 0; j < m; ++j) w(j) = double(k[static_cast<std::size_t>(j)]) / res;
      best = std::min(best, worst_case_coverage(occ, w));
      return;
    }
    for (int x = 0; x <= left; ++x) {
      k[static_cast<std::size_t>(i)] = x;
      rec(i + 1, left - x);
    }
  };
  rec(0, res);
  return best;
}

}  // namespace sdppe::testing
