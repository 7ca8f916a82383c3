#include <gtest/gtest.h>

#include <cmath>

#include "sdppe/baselines.hpp"
#include "sdppe/environment.hpp"
#include "sdppe/error.hpp"
#include "test_support.hpp"

using namespace sdppe;

namespace {

MdpSpec single_state_single_action() {
  MdpSpec env{TransitionModel(1, 1, 4), RewardFunction(1, 1, 4), Eigen::VectorXd::Ones(1)};
  for (int h = 0; h < 4; ++h) {
    env.transitions.kernel(h, 0)(0, 0) = 1.0;
    env.rewards.at(h)(0, 0) = 0.5;
  }
  return env;
}

double v_star(const MdpSpec& env) {
  return optimal_values(env.transitions, env.rewards, env.initial).values.initial_value;
}

}  // namespace

TEST(Algorithm, NamesRoundTrip) {
  for (Algorithm a : {Algorithm::kSdpPe, Algorithm::kPe, Algorithm::kUcbvi, Algorithm::kUcbviLdp,
                      Algorithm::kUcbviJdp}) {
    EXPECT_EQ(parse_algorithm(algorithm_name(a)), a);
  }
  EXPECT_THROW(parse_algorithm("ucb"), ConfigError);
  EXPECT_TRUE(is_private(Algorithm::kUcbviJdp));
  EXPECT_FALSE(is_private(Algorithm::kPe));
}

TEST(Laplace, MomentsAndSymmetry) {
  Rng rng = make_stream(1, Stream::kBaselineNoise);
  const int n = 200000;
  const double b = 3.0;
  double sum = 0.0, sq = 0.0;
  int positive = 0;
  for (int i = 0; i < n; ++i) {
    const double x = laplace(rng, b);
    ASSERT_TRUE(std::isfinite(x));
    sum += x;
    sq += x * x;
    positive += x > 0.0;
  }
  // sd of the sample mean is b * sqrt(2 / n) ~ 0.0095.
  EXPECT_NEAR(sum / n, 0.0, 0.05);
  EXPECT_NEAR(sq / n, 2.0 * b * b, 0.05 * 2.0 * b * b);
  EXPECT_NEAR(static_cast<double>(positive) / n, 0.5, 0.005);
}

TEST(Ucbvi, ZeroRegretWithOneAction) {
  const MdpSpec env = single_state_single_action();
  for (CountNoise noise : {CountNoise::kNone, CountNoise::kLocal, CountNoise::kCentral}) {
    UcbviOptions opt;
    opt.noise = noise;
    const UcbviResult r = run_ucbvi(env, 50, opt, 3);
    ASSERT_EQ(r.trace.size(), 50u);
    EXPECT_EQ(r.trace.final_regret(), 0.0);
  }
}

TEST(Ucbvi, ConsumesExactlyTAndIsDeterministic) {
  const MdpSpec env = riverswim(riverswim_small_params());
  for (CountNoise noise : {CountNoise::kNone, CountNoise::kLocal, CountNoise::kCentral}) {
    UcbviOptions opt;
    opt.noise = noise;
    const UcbviResult a = run_ucbvi(env, 777, opt, 9);
    const UcbviResult b = run_ucbvi(env, 777, opt, 9);
    ASSERT_EQ(a.trace.size(), 777u);
    EXPECT_EQ(a.trace.cumulative, b.trace.cumulative);
    for (std::size_t i = 1; i < a.trace.size(); ++i) {
      EXPECT_GE(a.trace.cumulative[i], a.trace.cumulative[i - 1]);
    }
    EXPECT_LE(a.trace.final_regret(), 3.0 * 777);
  }
}

TEST(Ucbvi, NonPrivateConverges) {
  const MdpSpec env = riverswim(riverswim_small_params());
  const std::int64_t T = 20000;
  const UcbviResult r = run_ucbvi(env, T, UcbviOptions{}, 0);
  const std::size_t tail = static_cast<std::size_t>(T / 10);
  const double late = (r.trace.cumulative.back() - r.trace.cumulative[T - tail - 1]) / tail;
  EXPECT_LT(late, 0.1 * v_star(env));
}

TEST(Ucbvi, OptimismHoldsInMostEpisodes) {
  sdppe::Rng gen = make_stream(21, Stream::kEpisode);
  for (int instance = 0; instance < 3; ++instance) {
    const MdpSpec env = sdppe::testing::random_mdp(3, 2, 3, gen);
    UcbviOptions opt;
    opt.record_optimism = true;
    const UcbviResult r = run_ucbvi(env, 2000, opt, static_cast<std::uint64_t>(instance));
    const double target = v_star(env);
    int optimistic = 0;
    for (double v : r.optimistic_value) optimistic += v >= target - 1e-12;
    EXPECT_GE(optimistic, static_cast<int>(0.95 * 2000)) << instance;
  }
}

TEST(Ucbvi, LocalNoiseHurtsAtSmallEpsilon) {
  const MdpSpec env = riverswim(riverswim_small_params());
  UcbviOptions ldp;
  ldp.noise = CountNoise::kLocal;
  ldp.epsilon = 0.1;
  int worse = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const double plain = run_ucbvi(env, 20000, UcbviOptions{}, seed).trace.final_regret();
    const double noisy = run_ucbvi(env, 20000, ldp, seed).trace.final_regret();
    worse += noisy > plain;
  }
  EXPECT_GE(worse, 18);
}

TEST(Ucbvi, InvalidOptions) {
  const MdpSpec env = riverswim(riverswim_small_params());
  UcbviOptions opt;
  opt.noise = CountNoise::kLocal;
  opt.epsilon = 0.0;
  EXPECT_THROW(run_ucbvi(env, 10, opt, 0), DomainError);
  opt = UcbviOptions{};
  opt.bonus_scale = -1.0;
  EXPECT_THROW(run_ucbvi(env, 10, opt, 0), DomainError);
  opt = UcbviOptions{};
  opt.delta = 1.0;
  EXPECT_THROW(run_ucbvi(env, 10, opt, 0), DomainError);
  EXPECT_THROW(run_ucbvi(env, 0, UcbviOptions{}, 0), DomainError);
  EXPECT_DOUBLE_EQ(UcbviOptions{}.laplace_scale(3), 18.0);
}

TEST(PeNonPrivate, MatchesSdpPeWithExactCounts) {
  const MdpSpec env = riverswim(riverswim_small_params());
  SdpPeOptions opt;
  opt.C = 0.05;
  const ExactPrivatizer exact;
  const SdpPeResult a = run_pe_nonprivate(env, 3000, 4, opt);
  const SdpPeResult b = run_sdp_pe(env, 3000, exact, opt, 4);
  EXPECT_EQ(a.trace.cumulative, b.trace.cumulative);
  EXPECT_EQ(a.final_active.ids, b.final_active.ids);
}

// With a threshold small enough to eliminate, exact counts still keep the
// optimal policy.
TEST(PeNonPrivate, KeepsTheOptimalPolicy) {
  const MdpSpec env = riverswim(riverswim_small_params());
  const PolicyId best =
      optimal_values(env.transitions, env.rewards, env.initial).greedy.id(env.num_actions());
  SdpPeOptions opt;
  opt.C = 0.05;
  int kept = 0;
  int eliminated = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const SdpPeResult r = run_pe_nonprivate(env, 2000, seed, opt);
    kept += r.final_active.contains(best);
    eliminated += r.final_active.size() < 512;
    ASSERT_EQ(r.trace.size(), 2000u);
    EXPECT_LE(r.trace.final_regret(), 3.0 * 2000);
  }
  EXPECT_EQ(kept, 200);
  EXPECT_GE(eliminated, 180);  // not vacuous: most runs do eliminate
}
