#pragma once

// Shuffle-model private counting for batches of trajectories.
//
// Every counter (visits per (h,s,a), transitions per (h,s,a,s'), rewards per
// (h,s,a)) is released through the same binary summation protocol: each user
// sends its bit plus binomial noise, an in-process shuffler permutes the
// messages, and the analyzer subtracts the expected noise. Transition counters
// are then repaired (nonnegative, consistent with the visit total) and
// shifted upward so they never undercount.

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "sdppe/environment.hpp"
#include "sdppe/rng.hpp"

namespace sdppe {

/// Total (epsilon, delta) for one batch and its split across counters:
/// epsilon' = epsilon / (3H), delta' = delta / (H S A).
struct PrivacyBudget {
  double epsilon = 1.0;
  double delta = 0.05;
  int horizon = 1;
  int states = 1;
  int actions = 1;

  double counter_epsilon() const { return epsilon / (3.0 * horizon); }
  double counter_delta() const { return delta / (static_cast<double>(horizon) * states * actions); }
  void validate() const;
};

/// tau = ceil(max(96 ln(2/delta') / epsilon'^2, 8 / epsilon')).
std::int64_t compute_tau(double counter_epsilon, double counter_delta);

enum class NoiseRegime { kSmallBatch, kLargeBatch };

/// Per-user noise for a batch of n users: m = ceil(tau/n) fair bits when
/// n <= tau, otherwise one Bernoulli(tau / 2n) bit.
struct NoiseConfig {
  std::int64_t tau = 1;
  std::int64_t batch_size = 1;
  NoiseRegime regime = NoiseRegime::kSmallBatch;
  std::int64_t bits_per_user = 1;  // m, small-batch only
  double bernoulli_p = 0.0;        // large-batch only

  static NoiseConfig make(std::int64_t tau, std::int64_t batch_size);

  /// E[sum of all users' noise], subtracted by the analyzer.
  double expected_noise() const;
  /// Var[sum of all users' noise].
  double noise_variance() const;
  /// Trials and success probability of the aggregate binomial noise.
  std::int64_t noise_trials() const;
  double noise_success() const;
};

/// Source of the randomizer's noise bits; replaced by fixed stubs in tests.
class NoiseSource {
 public:
  virtual ~NoiseSource() = default;
  virtual std::int64_t fair_bits(std::int64_t m) = 0;  // sum of m Bernoulli(1/2)
  virtual int biased_bit(double p) = 0;                // one Bernoulli(p)
};

class RngNoise final : public NoiseSource {
 public:
  explicit RngNoise(Rng& rng) : rng_(&rng) {}
  std::int64_t fair_bits(std::int64_t m) override { return binomial_half(*rng_, m); }
  int biased_bit(double p) override { return bernoulli(*rng_, p) ? 1 : 0; }

 private:
  Rng* rng_;
};

/// Every noise bit is `value` (0 or 1).
class FixedNoise final : public NoiseSource {
 public:
  explicit FixedNoise(int value) : value_(value) {}
  std::int64_t fair_bits(std::int64_t m) override { return value_ ? m : 0; }
  int biased_bit(double) override { return value_; }

 private:
  int value_;
};

/// The user-side encoder: z = d + noise.
std::int64_t randomize(int datum, const NoiseConfig& cfg, NoiseSource& noise);

/// Uniform Fisher-Yates permutation.
std::vector<std::int64_t> shuffle(std::vector<std::int64_t> messages, Rng& rng);

/// Sum of messages minus the expected noise. Can be negative or fractional.
double analyze(std::span<const std::int64_t> messages, std::int64_t n, const NoiseConfig& cfg);

/// randomize -> shuffle -> analyze over one counter's user bits.
double release_counter(std::span<const std::uint8_t> bits, const NoiseConfig& cfg,
                       NoiseSource& noise, Rng& shuffle_rng);

struct RepairResult {
  Eigen::VectorXd counts;
  double t = 0.0;  // minimal max-deviation from the noisy counts
};

/// Solves  min t  s.t.  n >= 0,  |n_i - noisy_i| <= t,  |sum n - total| <= K/4.
///
/// t* is found in closed form. The returned minimiser starts from max(noisy, 0)
/// and moves the sum onto the nearest end of the allowed total band, sharing
/// the move among coordinates in proportion to their remaining slack.
///
/// When total + K/4 < 0 no nonnegative vector meets the band; the result is
/// the zero vector with t = max |noisy_i|.
RepairResult repair_counts(const Eigen::VectorXd& noisy, double total, double K);

struct ShiftedCounts {
  Eigen::VectorXd per_successor;  // repaired + K / (2S)
  double total = 0.0;             // sum of per_successor, i.e. sum repaired + K/2
};

ShiftedCounts optimistic_shift(const Eigen::VectorXd& repaired, double K, int S);

/// Visit, transition and reward tables for one batch, stored as doubles so that
/// true and private counts share a type.
class CountTable {
 public:
  CountTable() = default;
  CountTable(int horizon, int states, int actions);

  int horizon() const { return horizon_; }
  int num_states() const { return states_; }
  int num_actions() const { return actions_; }

  double& visit(int h, int s, int a) { return visits_[uh(h)](s, a); }
  double visit(int h, int s, int a) const { return visits_[uh(h)](s, a); }
  double& reward(int h, int s, int a) { return rewards_[uh(h)](s, a); }
  double reward(int h, int s, int a) const { return rewards_[uh(h)](s, a); }
  double& transition(int h, int s, int a, int next) { return transitions_[uha(h, a)](s, next); }
  double transition(int h, int s, int a, int next) const {
    return transitions_[uha(h, a)](s, next);
  }
  /// Row of successor counts for (h, s, a).
  Eigen::VectorXd successors(int h, int s, int a) const {
    return transitions_[uha(h, a)].row(s).transpose();
  }

 private:
  static std::size_t uh(int h) { return static_cast<std::size_t>(h); }
  std::size_t uha(int h, int a) const {
    return static_cast<std::size_t>(h) * static_cast<std::size_t>(actions_) +
           static_cast<std::size_t>(a);
  }

  int horizon_ = 0;
  int states_ = 0;
  int actions_ = 0;
  std::vector<Eigen::MatrixXd> visits_;
  std::vector<Eigen::MatrixXd> transitions_;
  std::vector<Eigen::MatrixXd> rewards_;
};

struct RawBatchCounts {
  CountTable counts;
  std::int64_t users = 0;

  static RawBatchCounts from(std::span<const Trajectory> batch, int horizon, int states,
                             int actions);
};

struct PrivateCounts {
  CountTable counts;    // released values after repair and shift
  CountTable analyzer;  // raw analyzer outputs before post-processing
  double K = 0.0;       // precision for visit and transition counts
  double E = 0.0;       // precision for reward sums
  std::int64_t users = 0;
};

/// Produces PrivateCounts from a batch. Implementations must be stateless
/// between calls: all randomness comes from the caller's engine.
class Privatizer {
 public:
  virtual ~Privatizer() = default;
  virtual PrivateCounts privatize(std::span<const Trajectory> batch, int horizon, int states,
                                  int actions, Rng& rng) const = 0;
  virtual double precision() const = 0;
  /// True when released counts are the true counts (no noise, no shift).
  virtual bool exact() const { return false; }
};

/// Identity release with K = E = 0.
class ExactPrivatizer final : public Privatizer {
 public:
  PrivateCounts privatize(std::span<const Trajectory> batch, int horizon, int states, int actions,
                          Rng& rng) const override;
  double precision() const override { return 0.0; }
  bool exact() const override { return true; }
};

struct PrivatizerConfig {
  PrivacyBudget budget;
  std::int64_t total_episodes = 1;  // T, sizes the union bound inside K
  std::optional<std::int64_t> tau;  // overrides compute_tau
  std::optional<double> K;          // overrides the precision formula
  double K_scale = 1.0;             // multiplies the formula value of K
};

/// K = 4 sqrt(3 tau ln(2 H S^2 A T / delta)).
double precision_from_tau(std::int64_t tau, const PrivacyBudget& budget,
                          std::int64_t total_episodes);

class ShufflePrivatizer final : public Privatizer {
 public:
  explicit ShufflePrivatizer(PrivatizerConfig config);

  PrivateCounts privatize(std::span<const Trajectory> batch, int horizon, int states, int actions,
                          Rng& rng) const override;
  double precision() const override { return K_; }
  std::int64_t tau() const { return tau_; }
  const PrivatizerConfig& config() const { return config_; }

  /// Noise-free stub: users send their bit unchanged and the analyzer
  /// subtracts nothing, so analyzer outputs equal the true counts.
  void set_noise_free(bool on) { noise_free_ = on; }
  bool noise_free() const { return noise_free_; }

 private:
  PrivatizerConfig config_;
  std::int64_t tau_;
  double K_;
  bool noise_free_ = false;
};

/// Convenience wrapper: one batch through a freshly configured shuffle privatizer.
PrivateCounts privatize_batch(std::span<const Trajectory> batch, const PrivatizerConfig& config,
                              Rng& rng);

/// Assumption checks on one batch. The deterministic properties must always
/// hold; the precision properties hold with high probability.
struct AssumptionReport {
  bool consistent = true;     // visit total == sum of successor counts, exactly
  bool positive = true;       // every successor count > 0
  bool error_event = true;    // every analyzer output within K/4 of the truth
  bool never_under = true;    // visit totals >= true totals
  bool visits_within_K = true;
  bool transitions_within_K = true;
  bool rewards_within_E = true;

  bool deterministic_ok() const { return consistent && positive && (!error_event || never_under); }
  bool precision_ok() const { return visits_within_K && transitions_within_K && rewards_within_E; }
};

AssumptionReport check_private_counts(const RawBatchCounts& truth, const PrivateCounts& released);

/// Exact hockey-stick divergence between the shuffler outputs on neighbouring
/// inputs (0, d...) and (1, d...), both directions.
struct AuditResult {
  std::int64_t tau = 0;
  std::int64_t batch_size = 0;
  double epsilon = 0.0;
  double forward = 0.0;   // sup_E P[M(D) in E] - e^eps P[M(D') in E]
  double backward = 0.0;  // sup_E P[M(D') in E] - e^eps P[M(D) in E]

  double divergence() const { return forward > backward ? forward : backward; }
  bool passes(double delta) const { return divergence() <= delta; }
};

inline constexpr std::int64_t kAuditSupportLimit = 1'000'000;

/// Enumerates the binomial noise PMF; throws DomainError above
/// kAuditSupportLimit support points. `input_difference` is the gap between
/// the two inputs' data sums (1 for neighbours, 0 for identical inputs).
AuditResult audit_hockey_stick(const NoiseConfig& cfg, double counter_epsilon,
                               int input_difference = 1);

}  // namespace sdppe
