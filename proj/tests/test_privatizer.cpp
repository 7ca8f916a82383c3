#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <map>

#include "sdppe/environment.hpp"
#include "sdppe/error.hpp"
#include "sdppe/privatizer.hpp"
#include "test_support.hpp"

using namespace sdppe;
using sdppe::testing::bisect_repair;

namespace {

// Every user's noise sits exactly at its mean (requires an even bit count).
class MeanNoise final : public NoiseSource {
 public:
  std::int64_t fair_bits(std::int64_t m) override { return m / 2; }
  int biased_bit(double) override { return 0; }
};

PrivatizerConfig small_riverswim_config(double epsilon) {
  PrivatizerConfig cfg;
  cfg.budget = PrivacyBudget{epsilon, 0.05, 3, 3, 2};
  cfg.total_episodes = 20000;
  return cfg;
}

// Episodes of uniformly drawn deterministic policies, so that many tuples
// see data.
std::vector<Trajectory> random_policy_batch(const MdpSpec& spec, int n, Rng& rng) {
  const std::uint64_t count = policy_count(spec.num_states(), spec.num_actions(), spec.horizon());
  std::vector<Trajectory> batch;
  batch.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const DeterministicPolicy pi = DeterministicPolicy::from_id(
        rng() % count, spec.num_states(), spec.num_actions(), spec.horizon());
    batch.push_back(run_episode(spec, pi, rng));
    batch.back().user_id = i;
  }
  return batch;
}

}  // namespace

TEST(ComputeTau, PinnedValue) {
  // 96 ln(2e4) * 18^2 = 308038.077 (evaluated in 40-digit arithmetic).
  EXPECT_EQ(compute_tau(1.0 / 18.0, 1e-4), 308039);
}

TEST(ComputeTau, DoublingEpsilonQuartersTheLogBranch) {
  for (double eps : {0.01, 0.1, 0.3, 0.45}) {
    for (double delta : {1e-9, 1e-4, 0.3}) {
      const double a = 96.0 * std::log(2.0 / delta) / (eps * eps);
      const double a2 = 96.0 * std::log(2.0 / delta) / ((2 * eps) * (2 * eps));
      EXPECT_EQ(a2, a / 4.0);
      EXPECT_EQ(compute_tau(2 * eps, delta), static_cast<std::int64_t>(std::ceil(a / 4.0)));
    }
  }
}

// 96 ln(2/delta') / eps'^2 > 96 ln 2 / eps' > 8 / eps' on the whole domain, so
// the second branch of the max is never the larger one.
TEST(ComputeTau, LogBranchAlwaysDominatesInsideTheDomain) {
  for (double eps = 0.01; eps < 1.0; eps += 0.07) {
    for (double delta : {1e-12, 1e-3, 0.5, 0.999999}) {
      const double a = 96.0 * std::log(2.0 / delta) / (eps * eps);
      EXPECT_GT(a, 8.0 / eps);
      EXPECT_EQ(compute_tau(eps, delta), static_cast<std::int64_t>(std::ceil(a)));
    }
  }
}

TEST(ComputeTau, RejectsOutOfRange) {
  EXPECT_THROW(compute_tau(0.0, 0.1), DomainError);
  EXPECT_THROW(compute_tau(1.0, 0.1), DomainError);
  EXPECT_THROW(compute_tau(0.5, 0.0), DomainError);
  EXPECT_THROW(compute_tau(0.5, 1.0), DomainError);
}

TEST(PrivacyBudgetSplit, PerCounterShares) {
  const PrivacyBudget b{1.0, 0.06, 6, 4, 2};
  EXPECT_DOUBLE_EQ(b.counter_epsilon(), 1.0 / 18.0);
  EXPECT_DOUBLE_EQ(b.counter_delta(), 0.06 / 48.0);
  EXPECT_NO_THROW(b.validate());
  EXPECT_THROW((PrivacyBudget{-1.0, 0.06, 6, 4, 2}.validate()), DomainError);
  EXPECT_THROW((PrivacyBudget{1.0, 1.5, 6, 4, 2}.validate()), DomainError);
}

TEST(NoiseConfigMake, Regimes) {
  const NoiseConfig small = NoiseConfig::make(16, 5);
  EXPECT_EQ(small.regime, NoiseRegime::kSmallBatch);
  EXPECT_EQ(small.bits_per_user, 4);
  EXPECT_DOUBLE_EQ(small.expected_noise(), 10.0);
  const NoiseConfig boundary = NoiseConfig::make(16, 16);
  EXPECT_EQ(boundary.regime, NoiseRegime::kSmallBatch);
  EXPECT_EQ(boundary.bits_per_user, 1);
  const NoiseConfig large = NoiseConfig::make(15, 20);
  EXPECT_EQ(large.regime, NoiseRegime::kLargeBatch);
  EXPECT_DOUBLE_EQ(large.bernoulli_p, 15.0 / 40.0);
  EXPECT_DOUBLE_EQ(large.expected_noise(), 7.5);
  EXPECT_THROW(NoiseConfig::make(16, 0), DomainError);
  EXPECT_THROW(NoiseConfig::make(0, 3), DomainError);
}

TEST(Randomize, StubbedNoise) {
  NoiseConfig small = NoiseConfig::make(16, 4);
  ASSERT_EQ(small.bits_per_user, 4);
  FixedNoise zeros(0), ones(1);
  EXPECT_EQ(randomize(1, small, zeros), 1);
  EXPECT_EQ(randomize(0, small, ones), 4);
  const NoiseConfig large = NoiseConfig::make(4, 100);
  EXPECT_EQ(randomize(0, large, ones), 1);
  EXPECT_EQ(randomize(1, large, zeros), 1);
  EXPECT_THROW(randomize(2, large, zeros), DomainError);
}

TEST(Randomize, SmallBatchMeanIsHalfM) {
  const NoiseConfig cfg = NoiseConfig::make(100, 10);  // m = 10
  Rng rng = make_stream(1, Stream::kProtocol);
  RngNoise noise(rng);
  constexpr int kDraws = 100'000;
  double sum = 0.0;
  for (int i = 0; i < kDraws; ++i) sum += static_cast<double>(randomize(0, cfg, noise));
  const double sd = std::sqrt(10 * 0.25 / kDraws);
  EXPECT_NEAR(sum / kDraws, 5.0, 3 * sd);
}

TEST(Shuffle, SingleMessageUnchanged) {
  Rng rng = make_stream(2, Stream::kProtocol);
  EXPECT_EQ(shuffle({42}, rng), std::vector<std::int64_t>{42});
}

TEST(Shuffle, PreservesMultiset) {
  Rng rng = make_stream(3, Stream::kProtocol);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::int64_t> msgs;
    for (int i = 0; i < 1 + trial % 17; ++i) msgs.push_back(static_cast<std::int64_t>(rng() % 5));
    std::vector<std::int64_t> out = shuffle(msgs, rng);
    std::sort(msgs.begin(), msgs.end());
    std::sort(out.begin(), out.end());
    EXPECT_EQ(msgs, out);
  }
}

TEST(Shuffle, UniformOverThreeItemOrders) {
  Rng rng = make_stream(4, Stream::kProtocol);
  constexpr int kShuffles = 10'000;
  std::map<std::vector<std::int64_t>, int> counts;
  for (int i = 0; i < kShuffles; ++i) ++counts[shuffle({0, 1, 2}, rng)];
  ASSERT_EQ(counts.size(), 6u);
  const double p = 1.0 / 6.0;
  const double sd = std::sqrt(p * (1 - p) / kShuffles);
  for (const auto& [order, c] : counts) EXPECT_NEAR(c / double(kShuffles), p, 3 * sd);
}

TEST(Analyze, NoiseAtItsMeanRecoversTheData) {
  const NoiseConfig cfg = NoiseConfig::make(4, 3);  // m = 2
  MeanNoise noise;
  std::vector<std::int64_t> msgs;
  for (int d : {1, 0, 1}) msgs.push_back(randomize(d, cfg, noise));
  EXPECT_DOUBLE_EQ(analyze(msgs, 3, cfg), 2.0);
}

TEST(Analyze, FractionalCenteringAndCountMismatch) {
  const NoiseConfig cfg = NoiseConfig::make(7, 10);
  const std::vector<std::int64_t> msgs(10, 0);
  EXPECT_DOUBLE_EQ(analyze(msgs, 10, cfg), -3.5);
  EXPECT_THROW(analyze(msgs, 9, cfg), DimensionError);
}

TEST(Analyze, DependsOnlyOnTheMultiset) {
  const NoiseConfig cfg = NoiseConfig::make(30, 8);
  Rng rng = make_stream(5, Stream::kProtocol);
  RngNoise noise(rng);
  std::vector<std::int64_t> msgs;
  for (int i = 0; i < 8; ++i) msgs.push_back(randomize(i % 2, cfg, noise));
  const double ref = analyze(msgs, 8, cfg);
  std::sort(msgs.begin(), msgs.end());
  do {
    EXPECT_EQ(analyze(msgs, 8, cfg), ref);
  } while (std::next_permutation(msgs.begin(), msgs.end()));
}

class ReleaseRegimes : public ::testing::TestWithParam<std::array<std::int64_t, 2>> {};

TEST_P(ReleaseRegimes, UnbiasedWithSubGaussianTails) {
  const auto [tau, n] = GetParam();
  const NoiseConfig cfg = NoiseConfig::make(tau, n);
  Rng rng = make_stream(6 + static_cast<std::uint64_t>(n), Stream::kProtocol);
  RngNoise noise(rng);
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = (i % 3 == 0) ? 1 : 0;
  const double truth = static_cast<double>(std::count(bits.begin(), bits.end(), 1));
  constexpr int kReps = 100'000;
  double sum = 0.0;
  int over_10 = 0, over_01 = 0;
  const double thr_10 = std::sqrt(3.0 * tau * std::log(2.0 / 0.1));
  const double thr_01 = std::sqrt(3.0 * tau * std::log(2.0 / 0.01));
  for (int r = 0; r < kReps; ++r) {
    const double err = release_counter(bits, cfg, noise, rng) - truth;
    sum += err;
    over_10 += std::abs(err) > thr_10;
    over_01 += std::abs(err) > thr_01;
  }
  const double sd = std::sqrt(cfg.noise_variance() / kReps);
  EXPECT_NEAR(sum / kReps, 0.0, 3 * sd);
  EXPECT_LT(over_10 / double(kReps), 0.1);
  EXPECT_LT(over_01 / double(kReps), 0.01);
}

INSTANTIATE_TEST_SUITE_P(BothRegimes, ReleaseRegimes,
                         ::testing::Values(std::array<std::int64_t, 2>{200, 7},
                                           std::array<std::int64_t, 2>{200, 50},
                                           std::array<std::int64_t, 2>{201, 400}));

TEST(RepairCounts, RaisesSumOntoTheBand) {
  const RepairResult r = repair_counts(Eigen::Vector2d(5, 3), 10.0, 4.0);
  EXPECT_DOUBLE_EQ(r.t, 0.5);
  EXPECT_DOUBLE_EQ(r.counts(0), 5.5);
  EXPECT_DOUBLE_EQ(r.counts(1), 3.5);
}

TEST(RepairCounts, FeasibleAtZero) {
  const Eigen::Vector3d noisy(2.0, 0.5, 4.0);
  const RepairResult r = repair_counts(noisy, 7.2, 4.0);
  EXPECT_EQ(r.t, 0.0);
  EXPECT_EQ(r.counts, noisy);
}

TEST(RepairCounts, SingleNegativeCoordinate) {
  const RepairResult r = repair_counts(Eigen::VectorXd::Constant(1, -2.0), 0.0, 4.0);
  EXPECT_DOUBLE_EQ(r.t, 2.0);
  EXPECT_DOUBLE_EQ(r.counts(0), 0.0);
}

TEST(RepairCounts, InfeasibleBandReturnsZeros) {
  const RepairResult r = repair_counts(Eigen::Vector2d(-3.0, 1.0), -10.0, 4.0);
  EXPECT_TRUE(r.counts.isZero());
  EXPECT_DOUBLE_EQ(r.t, 3.0);
}

TEST(RepairCounts, MatchesBisectionAndSatisfiesConstraints) {
  Rng rng = make_stream(7, Stream::kProtocol);
  for (int trial = 0; trial < 2000; ++trial) {
    const int d = 1 + static_cast<int>(rng() % 6);
    Eigen::VectorXd noisy(d);
    for (int i = 0; i < d; ++i) noisy(i) = (uniform01(rng) - 0.3) * 40.0;
    const double total = (uniform01(rng) - 0.2) * 80.0;
    const double K = 0.1 + uniform01(rng) * 40.0;
    if (total + K / 4 < 0) continue;
    const RepairResult r = repair_counts(noisy, total, K);
    const double scale = 1e-9 * (1.0 + noisy.cwiseAbs().sum() + std::abs(total));
    EXPECT_NEAR(r.t, bisect_repair(noisy, total, K / 4), scale);
    EXPECT_TRUE((r.counts.array() >= 0.0).all());
    EXPECT_LE((r.counts - noisy).cwiseAbs().maxCoeff(), r.t + scale);
    EXPECT_LE(std::abs(r.counts.sum() - total), K / 4 + scale);
  }
}

TEST(OptimisticShift, Arithmetic) {
  const ShiftedCounts s = optimistic_shift(Eigen::Vector2d(5.5, 3.5), 4.0, 2);
  EXPECT_DOUBLE_EQ(s.per_successor(0), 6.5);
  EXPECT_DOUBLE_EQ(s.per_successor(1), 4.5);
  EXPECT_DOUBLE_EQ(s.total, 11.0);
  const ShiftedCounts z = optimistic_shift(Eigen::Vector4d::Zero(), 4.0, 4);
  EXPECT_TRUE((z.per_successor.array() == 0.5).all());
  EXPECT_DOUBLE_EQ(z.total, 2.0);
  EXPECT_THROW(optimistic_shift(Eigen::Vector3d::Zero(), 4.0, 4), DimensionError);
}

TEST(PrivatizeBatch, NoiseFreeStubGivesTruthPlusShift) {
  const MdpSpec spec = riverswim(riverswim_small_params());
  Rng rng = make_stream(8, Stream::kEpisode);
  const std::vector<Trajectory> batch = random_policy_batch(spec, 300, rng);
  ShufflePrivatizer priv(small_riverswim_config(1.0));
  priv.set_noise_free(true);
  Rng prot = make_stream(8, Stream::kProtocol);
  const PrivateCounts pc = priv.privatize(batch, 3, 3, 2, prot);
  const RawBatchCounts raw = RawBatchCounts::from(batch, 3, 3, 2);
  const double K = priv.precision();
  for (int h = 0; h < 3; ++h) {
    for (int s = 0; s < 3; ++s) {
      for (int a = 0; a < 2; ++a) {
        EXPECT_NEAR(pc.counts.visit(h, s, a), raw.counts.visit(h, s, a) + K / 2, 1e-9);
        EXPECT_EQ(pc.counts.reward(h, s, a), raw.counts.reward(h, s, a));
        for (int s2 = 0; s2 < 3; ++s2) {
          EXPECT_NEAR(pc.counts.transition(h, s, a, s2),
                      raw.counts.transition(h, s, a, s2) + K / 6, 1e-9);
        }
      }
    }
  }
}

TEST(PrivatizeBatch, OneUserContributesOncePerStep) {
  const MdpSpec spec = riverswim(riverswim_small_params());
  Rng rng = make_stream(9, Stream::kEpisode);
  const std::vector<Trajectory> batch = random_policy_batch(spec, 1, rng);
  const RawBatchCounts raw = RawBatchCounts::from(batch, 3, 3, 2);
  for (int h = 0; h < 3; ++h) {
    double visits = 0.0, transitions = 0.0;
    for (int s = 0; s < 3; ++s) {
      for (int a = 0; a < 2; ++a) {
        visits += raw.counts.visit(h, s, a);
        EXPECT_LE(raw.counts.reward(h, s, a), raw.counts.visit(h, s, a));
        for (int s2 = 0; s2 < 3; ++s2) {
          const double c = raw.counts.transition(h, s, a, s2);
          EXPECT_TRUE(c == 0.0 || c == 1.0);
          transitions += c;
        }
      }
    }
    EXPECT_EQ(visits, 1.0);
    EXPECT_EQ(transitions, 1.0);
  }
  ShufflePrivatizer priv(small_riverswim_config(1.0));
  Rng prot = make_stream(9, Stream::kProtocol);
  const PrivateCounts pc = priv.privatize(batch, 3, 3, 2, prot);
  EXPECT_TRUE(check_private_counts(raw, pc).deterministic_ok());
}

TEST(PrivatizeBatch, Errors) {
  ShufflePrivatizer priv(small_riverswim_config(1.0));
  Rng rng = make_stream(10, Stream::kProtocol);
  EXPECT_THROW(priv.privatize({}, 3, 3, 2, rng), DomainError);
  const MdpSpec spec = riverswim(RiverSwimParams{});
  const std::vector<Trajectory> batch(3, run_episode(spec, DeterministicPolicy(4, 6, kRight), rng));
  EXPECT_THROW(priv.privatize(batch, 6, 4, 2, rng), DimensionError);
}

TEST(PrivatizeBatch, AssumptionChecksOnRiverSwimBatches) {
  const MdpSpec spec = riverswim(riverswim_small_params());
  const ShufflePrivatizer priv(small_riverswim_config(1.0));
  constexpr int kReps = 1000;
  int deterministic = 0, precise = 0;
  for (int rep = 0; rep < kReps; ++rep) {
    Rng env = make_stream(static_cast<std::uint64_t>(rep), Stream::kEpisode);
    Rng prot = make_stream(static_cast<std::uint64_t>(rep), Stream::kProtocol);
    const std::vector<Trajectory> batch = random_policy_batch(spec, 512, env);
    const PrivateCounts pc = priv.privatize(batch, 3, 3, 2, prot);
    const AssumptionReport rep_ = check_private_counts(RawBatchCounts::from(batch, 3, 3, 2), pc);
    deterministic += rep_.deterministic_ok();
    precise += rep_.deterministic_ok() && rep_.precision_ok();
  }
  EXPECT_EQ(deterministic, kReps);
  EXPECT_GE(precise, 0.99 * kReps);
}

TEST(PrivatizerConfigKnobs, OverridesAndScale) {
  PrivatizerConfig cfg = small_riverswim_config(1.0);
  const ShufflePrivatizer base(cfg);
  EXPECT_EQ(base.tau(), compute_tau(1.0 / 9.0, 0.05 / 18.0));
  EXPECT_DOUBLE_EQ(base.precision(), precision_from_tau(base.tau(), cfg.budget, 20000));
  cfg.K_scale = 0.25;
  EXPECT_DOUBLE_EQ(ShufflePrivatizer(cfg).precision(), 0.25 * base.precision());
  cfg.tau = 100;
  cfg.K = 12.0;
  const ShufflePrivatizer over(cfg);
  EXPECT_EQ(over.tau(), 100);
  EXPECT_DOUBLE_EQ(over.precision(), 12.0);
}

TEST(Audit, SmallTauWithinBudget) {
  const AuditResult r = audit_hockey_stick(NoiseConfig::make(16, 8), 0.5);
  EXPECT_TRUE(r.passes(0.9));
  EXPECT_GT(r.divergence(), 0.0);
}

// The shifted supports differ at the two endpoints, so as eps grows the
// divergence falls to P(Q = 0) forward and P(Q = N) backward, not to zero.
TEST(Audit, HugeEpsilonAndIdenticalInputs) {
  const NoiseConfig cfg = NoiseConfig::make(16, 8);  // N = 16 fair bits
  const AuditResult big = audit_hockey_stick(cfg, 800.0);
  EXPECT_DOUBLE_EQ(big.forward, std::ldexp(1.0, -16));
  EXPECT_DOUBLE_EQ(big.backward, std::ldexp(1.0, -16));
  for (double eps : {0.0, 0.1, 2.0}) EXPECT_EQ(audit_hockey_stick(cfg, eps, 0).divergence(), 0.0);
}

// At eps = 0 the divergence is the total variation distance between
// Binomial(N, p) and its shift by one; for N = 1 that is max(p, 1 - p).
TEST(Audit, TotalVariationAtZeroEpsilon) {
  const NoiseConfig cfg = NoiseConfig::make(1, 4);  // Bernoulli(1/8) per user, N = 4
  double tv = 0.0;
  const double p = 1.0 / 8.0;
  std::array<double, 6> P{}, Q{};
  for (int k = 0; k <= 4; ++k) {
    P[k] = std::tgamma(5.0) / (std::tgamma(k + 1.0) * std::tgamma(5.0 - k)) *
           std::pow(p, k) * std::pow(1 - p, 4 - k);
    Q[k + 1] = P[k];
  }
  for (int k = 0; k <= 5; ++k) tv += std::max(0.0, P[k] - Q[k]);
  const AuditResult r = audit_hockey_stick(cfg, 0.0);
  EXPECT_NEAR(r.forward, tv, 1e-12);
  EXPECT_NEAR(r.backward, tv, 1e-12);
}

TEST(Audit, GridFromComputedTau) {
  for (double eps : {0.25, 0.5}) {
    for (double delta : {1e-2, 1e-4, 1e-6}) {
      const std::int64_t tau = compute_tau(eps, delta);
      for (std::int64_t n : {2, 8, 32}) {
        const AuditResult r = audit_hockey_stick(NoiseConfig::make(tau, n), eps);
        EXPECT_TRUE(r.passes(delta)) << tau << " " << n << " " << r.divergence();
      }
    }
  }
}

TEST(Audit, SupportLimit) {
  EXPECT_THROW(audit_hockey_stick(NoiseConfig::make(2'000'000, 2), 0.1), DomainError);
}
