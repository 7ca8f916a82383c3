#include "sdppe/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "sdppe/environment.hpp"
#include "sdppe/error.hpp"
#include "sdppe/privatizer.hpp"

namespace sdppe {

namespace {

constexpr struct {
  Algorithm algorithm;
  std::string_view name;
} kAlgorithmNames[] = {
    {Algorithm::kSdpPe, "sdp-pe"},     {Algorithm::kPe, "pe"},
    {Algorithm::kUcbvi, "ucbvi"},      {Algorithm::kUcbviLdp, "ucbvi-ldp"},
    {Algorithm::kUcbviJdp, "ucbvi-jdp"},
};

void add_noise(CountTable& table, double scale, Rng& rng) {
  const int H = table.horizon(), S = table.num_states(), A = table.num_actions();
  for (int h = 0; h < H; ++h) {
    for (int s = 0; s < S; ++s) {
      for (int a = 0; a < A; ++a) {
        table.visit(h, s, a) += laplace(rng, scale);
        for (int s2 = 0; s2 < S; ++s2) table.transition(h, s, a, s2) += laplace(rng, scale);
        table.reward(h, s, a) += laplace(rng, scale);
      }
    }
  }
}

void add_trajectory(CountTable& table, const Trajectory& t) {
  for (std::size_t h = 0; h < t.steps.size(); ++h) {
    const Step& st = t.steps[h];
    const int hh = static_cast<int>(h);
    table.visit(hh, st.state, st.action) += 1.0;
    table.transition(hh, st.state, st.action, st.next_state) += 1.0;
    table.reward(hh, st.state, st.action) += st.reward;
  }
}

struct Plan {
  DeterministicPolicy policy;
  double optimistic_value = 0.0;
};

Plan plan_optimistic(const CountTable& counts, const Eigen::VectorXd& initial, double log_term,
                     double bonus_scale) {
  const int H = counts.horizon(), S = counts.num_states(), A = counts.num_actions();
  Plan plan{DeterministicPolicy(S, H), 0.0};
  Eigen::VectorXd next = Eigen::VectorXd::Zero(S);
  for (int h = H - 1; h >= 0; --h) {
    const double cap = static_cast<double>(H - h);
    Eigen::VectorXd current(S);
    for (int s = 0; s < S; ++s) {
      double best = -1.0;
      int best_a = 0;
      for (int a = 0; a < A; ++a) {
        const double n = std::max(0.0, counts.visit(h, s, a));
        const Eigen::VectorXd succ = counts.successors(h, s, a).cwiseMax(0.0);
        const double mass = succ.sum();
        double q = cap;
        if (n > 0.0 && mass > 0.0) {
          const double r = std::clamp(counts.reward(h, s, a), 0.0, n) / n;
          const double bonus = bonus_scale * std::sqrt(2.0 * log_term / std::max(1.0, n));
          q = std::min(cap, r + succ.dot(next) / mass + bonus);
        }
        if (q > best) {
          best = q;
          best_a = a;
        }
      }
      plan.policy.set(h, s, best_a);
      current(s) = best;
    }
    next = current;
  }
  plan.optimistic_value = initial.dot(next);
  return plan;
}

}  // namespace

std::string_view algorithm_name(Algorithm algorithm) {
  for (const auto& entry : kAlgorithmNames) {
    if (entry.algorithm == algorithm) return entry.name;
  }
  throw DomainError("unknown algorithm");
}

Algorithm parse_algorithm(std::string_view tag) {
  for (const auto& entry : kAlgorithmNames) {
    if (entry.name == tag) return entry.algorithm;
  }
  throw ConfigError("", "unknown algorithm '" + std::string(tag) +
                            "' (expected sdp-pe, pe, ucbvi, ucbvi-ldp or ucbvi-jdp)");
}

bool is_private(Algorithm algorithm) {
  return algorithm == Algorithm::kSdpPe || algorithm == Algorithm::kUcbviLdp ||
         algorithm == Algorithm::kUcbviJdp;
}

SdpPeResult run_pe_nonprivate(const MdpSpec& env, std::int64_t T, std::uint64_t seed,
                              const SdpPeOptions& options) {
  const ExactPrivatizer exact;
  return run_sdp_pe(env, T, exact, options, seed);
}

double UcbviOptions::laplace_scale(int horizon) const { return 6.0 * horizon / epsilon; }

void UcbviOptions::validate() const {
  if (!(bonus_scale >= 0.0) || !std::isfinite(bonus_scale)) {
    throw DomainError("ucbvi: bonus scale must be finite and nonnegative");
  }
  if (!(delta > 0.0 && delta < 1.0)) throw DomainError("ucbvi: delta must lie in (0, 1)");
  if (noise != CountNoise::kNone && !(epsilon > 0.0 && std::isfinite(epsilon))) {
    throw DomainError("ucbvi: epsilon must be positive for the private variants");
  }
}

double laplace(Rng& rng, double b) {
  const double u = (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53 - 0.5;
  return u < 0.0 ? b * std::log1p(2.0 * u) : -b * std::log1p(-2.0 * u);
}

UcbviResult run_ucbvi(const MdpSpec& env, std::int64_t T, const UcbviOptions& options,
                      std::uint64_t seed) {
  env.validate();
  options.validate();
  if (T < 1) throw DomainError("ucbvi: T must be at least 1");
  const int S = env.num_states(), A = env.num_actions(), H = env.horizon();
  const double log_term =
      std::log(2.0 * S * A * H * static_cast<double>(T) / options.delta);
  const double scale = options.noise == CountNoise::kNone ? 0.0 : options.laplace_scale(H);
  const double v_star = optimal_values(env.transitions, env.rewards, env.initial)
                            .values.initial_value;

  CountTable exact(H, S, A);
  CountTable local(H, S, A);  // noisy running sums under local noise
  UcbviResult result;
  result.trace.seed = seed;
  const auto n = static_cast<std::size_t>(T);
  result.trace.cumulative.reserve(n);
  result.trace.stage.assign(n, 0);
  result.trace.active_set_size.assign(n, 1);
  double cumulative = 0.0;

  for (std::int64_t k = 0; k < T; ++k) {
    Rng noise = make_stream(seed, Stream::kBaselineNoise, static_cast<std::uint64_t>(k));
    Plan plan;
    if (options.noise == CountNoise::kCentral) {
      CountTable released = exact;
      add_noise(released, scale, noise);
      plan = plan_optimistic(released, env.initial, log_term, options.bonus_scale);
    } else {
      plan = plan_optimistic(options.noise == CountNoise::kLocal ? local : exact, env.initial,
                             log_term, options.bonus_scale);
    }
    if (options.record_optimism) result.optimistic_value.push_back(plan.optimistic_value);

    const double value =
        evaluate_policy(plan.policy, env.transitions, env.rewards, env.initial).initial_value;
    cumulative += std::max(0.0, v_star - value);
    result.trace.cumulative.push_back(cumulative);

    Rng rng = make_stream(seed, Stream::kEpisode, static_cast<std::uint64_t>(k));
    const Trajectory t = run_episode(env, plan.policy, rng);
    add_trajectory(exact, t);
    if (options.noise == CountNoise::kLocal) {
      add_trajectory(local, t);
      add_noise(local, scale, noise);
    }
  }
  return result;
}

}  // namespace sdppe
