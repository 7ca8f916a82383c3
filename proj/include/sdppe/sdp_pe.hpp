#pragma once

// Policy elimination with forgetting over exponentially growing stages.
//
// Each stage runs a crude exploration that finds rarely visited tuples and
// builds an absorbing model, a fine exploration driven by a coverage-optimal
// policy mixture, and an elimination step on confidence intervals. Every
// stage estimates only from its own private counts.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sdppe/environment.hpp"
#include "sdppe/mdp.hpp"
#include "sdppe/privatizer.hpp"
#include "sdppe/rng.hpp"

namespace sdppe {

// ---------------------------------------------------------------------------
// Schedule

/// One stage of the schedule. The crude phase uses `L` episodes; the fine
/// phase runs the coverage mixture for `fine_ref` and the crude layer
/// mixture for `fine_zero` episodes.
struct Stage {
  std::int64_t L = 0;
  std::int64_t crude = 0;
  std::int64_t fine_ref = 0;
  std::int64_t fine_zero = 0;
  std::int64_t first_episode = 0;

  std::int64_t episodes() const { return crude + fine_ref + fine_zero; }
};

struct BatchSchedule {
  std::int64_t total = 0;
  int c = 3;
  std::vector<Stage> stages;

  std::int64_t consumed() const;
};

/// Full stages L_b = 2^b (b = 1, 2, ...) while c * L_b episodes remain; the
/// remainder r then forms a final stage with L = floor(r / c) whose leftover
/// r - cL episodes extend its coverage-mixture run. A remainder below c
/// extends the last full stage instead.
BatchSchedule build_schedule(std::int64_t T, int c = 3);

/// floor(L / H) episodes per layer, the remainder going to the earliest layers.
std::vector<std::int64_t> layer_allocation(std::int64_t L, int horizon);

// ---------------------------------------------------------------------------
// Confidence constants

struct ConfidenceParams {
  int states = 1;
  int actions = 1;
  int horizon = 1;
  std::int64_t total_episodes = 1;
  double delta = 0.05;
  double K = 0.0;
  double C = 1.0;
  std::optional<double> C_K;  // multiplier of the privacy term; C when unset
  double C1 = 6.0;

  /// iota = ln(2 H A T / delta).
  double iota() const;
  /// 2 (C sqrt(S A H^3 iota / L) + C_K S^3 A H^5 K iota / L).
  double elimination_threshold(std::int64_t L) const;
  /// C1 K H^2 iota: tuples at or below this private count are infrequent.
  double infrequent_threshold() const;
};

// ---------------------------------------------------------------------------
// Absorbing models

class InfrequentTupleSet {
 public:
  InfrequentTupleSet() = default;
  InfrequentTupleSet(int horizon, int states, int actions);

  bool contains(int h, int s, int a, int next) const { return flags_[index(h, s, a, next)] != 0; }
  void insert(int h, int s, int a, int next) { flags_[index(h, s, a, next)] = 1; }
  std::size_t size() const;

 private:
  std::size_t index(int h, int s, int a, int next) const {
    return ((static_cast<std::size_t>(h) * static_cast<std::size_t>(states_) +
             static_cast<std::size_t>(s)) *
                static_cast<std::size_t>(actions_) +
            static_cast<std::size_t>(a)) *
               static_cast<std::size_t>(states_) +
           static_cast<std::size_t>(next);
  }

  int horizon_ = 0;
  int states_ = 0;
  int actions_ = 0;
  std::vector<std::uint8_t> flags_;
};

enum class ModelKind { kCrude, kRefined };

struct AbsorbingModel {
  TransitionModel transitions;  // absorbing; x† is state S
  InfrequentTupleSet infrequent;
  ModelKind kind = ModelKind::kCrude;
};

/// P(s'|s,a) = N(s,a,s') / N(s,a) for tuples outside T, remaining mass to x†,
/// for step h only. A nonpositive visit total sends the whole row to x†.
void estimate_layer(TransitionModel& model, int h, const CountTable& counts,
                    const InfrequentTupleSet& infrequent);

/// The true kernel with every T tuple's mass redirected to x†.
TransitionModel absorbing_truth(const TransitionModel& truth, const InfrequentTupleSet& infrequent);

// ---------------------------------------------------------------------------
// Active policies

/// Active set with ids kept in increasing order.
struct PolicySet {
  std::vector<PolicyId> ids;
  std::vector<DeterministicPolicy> policies;

  static PolicySet all(int states, int actions, int horizon,
                       std::uint64_t cap = kDefaultPolicyCap);
  static PolicySet from_ids(std::vector<PolicyId> ids, int states, int actions, int horizon);
  std::size_t size() const { return ids.size(); }
  bool contains(PolicyId id) const;
};

// ---------------------------------------------------------------------------
// Interaction with the environment

/// Per-episode cumulative regret plus the stage and active-set annotations.
struct RegretTrace {
  std::vector<double> cumulative;
  std::vector<int> stage;
  std::vector<std::int64_t> active_set_size;
  std::uint64_t seed = 0;
  std::string fingerprint;

  std::size_t size() const { return cumulative.size(); }
  double final_regret() const { return cumulative.empty() ? 0.0 : cumulative.back(); }
};

/// Runs episodes against the true MDP and charges each one
/// V*_1 - V^pi_1 (mixtures at their exact expected value). Episode k draws
/// from its own stream, so trajectories depend only on (seed, k, policy).
class Interaction {
 public:
  Interaction(const MdpSpec& env, std::uint64_t seed, std::int64_t budget);

  std::vector<Trajectory> run(const PolicyMixture& policy, std::int64_t episodes, int stage,
                              std::int64_t active_size);
  /// Fresh protocol stream for the next privatizer call.
  Rng next_protocol_stream();

  const MdpSpec& env() const { return *env_; }
  double optimal_value() const { return v_star_; }
  std::int64_t used() const { return used_; }
  std::int64_t remaining() const { return budget_ - used_; }
  RegretTrace& trace() { return trace_; }
  RegretTrace take_trace() { return std::move(trace_); }

 private:
  const MdpSpec* env_;
  std::uint64_t seed_;
  std::int64_t budget_;
  std::int64_t used_ = 0;
  std::uint64_t protocol_calls_ = 0;
  double v_star_;
  double cumulative_ = 0.0;
  RegretTrace trace_;
};

// ---------------------------------------------------------------------------
// Crude exploration

struct CrudeResult {
  InfrequentTupleSet infrequent;
  AbsorbingModel model;
  PolicyMixture pi_zero;  // uniform over all H*S*A layer policies
  /// layer_policy[h][s * A + a]: index into the active set of the argmax policy.
  std::vector<std::vector<std::size_t>> layer_policy;
};

CrudeResult crude_exploration(const PolicySet& active, std::int64_t L, const Privatizer& privatizer,
                              const ConfidenceParams& params, Interaction& interaction,
                              int stage_index);

// ---------------------------------------------------------------------------
// Fine exploration

/// Occupancy of every (h, s, a), flattened h-major, s, then a.
Eigen::VectorXd flat_occupancy(const DeterministicPolicy& policy, const TransitionModel& model,
                               const Eigen::VectorXd& initial);

/// sup over the columns mu of sum_i O_mu(i) / q(i), where q = O w, over rows i
/// with some positive entry. +inf when a supported row has q(i) = 0.
double worst_case_coverage(const Eigen::MatrixXd& occupancy, const Eigen::VectorXd& weights);

struct CoverageOptions {
  int max_iterations = 5000;
  double tolerance = 1e-2;       // stop when coverage <= support * (1 + tolerance)
  int grid_fallback_max = 8;     // exhaustive grid as well when |Pi| <= this
  std::int64_t grid_points = 20000;
};

struct CoverageSolution {
  Eigen::VectorXd weights;  // one per column
  double coverage = 0.0;
  std::size_t support = 0;  // rows with positive occupancy; a lower bound on any coverage
  int iterations = 0;
};

/// Weights over the columns of `occupancy` minimising the worst-case
/// coverage. Columns with identical occupancy are merged (weight goes to the
/// first). The minimiser maximises sum_i log q(i); the iteration
/// w <- w * g / support, with g the per-column coverage, climbs that objective.
CoverageSolution minimise_coverage(const Eigen::MatrixXd& occupancy,
                                   const CoverageOptions& options = {});

struct FinePolicy {
  PolicyMixture mixture;
  double coverage = 0.0;
  std::size_t support = 0;
};

FinePolicy fine_exploration_policy(const PolicySet& active, const AbsorbingModel& crude,
                                   const Eigen::VectorXd& initial,
                                   const CoverageOptions& options = {});

struct FineResult {
  AbsorbingModel model;
  RewardFunction reward;  // R / N clipped to [0, 1]; zero where N = 0
  PrivateCounts counts;
};

/// Runs pi_ref and pi_zero for the stage's fine-phase episode counts, privatizes
/// the combined batch and estimates the refined model with the crude T mask.
FineResult fine_exploration(const Stage& stage, const InfrequentTupleSet& infrequent,
                            const PolicyMixture& pi_ref, const PolicyMixture& pi_zero,
                            const Privatizer& privatizer, Interaction& interaction,
                            int stage_index, std::int64_t active_size);

/// Refined model and reward estimate from one batch of private counts.
FineResult estimate_refined(PrivateCounts counts, const InfrequentTupleSet& infrequent);

// ---------------------------------------------------------------------------
// Elimination

/// Keeps pi iff max_mu V^mu - V^pi < threshold. The maximiser always survives.
PolicySet eliminate(const PolicySet& active, std::span<const double> values, double threshold);

/// Values of every active policy under a model and reward.
std::vector<double> policy_values(const PolicySet& active, const TransitionModel& model,
                                  const RewardFunction& reward, const Eigen::VectorXd& initial);

// ---------------------------------------------------------------------------
// The full algorithm

struct StageReport {
  int index = 0;
  Stage stage;
  std::size_t active_before = 0;
  std::size_t active_after = 0;
  std::size_t infrequent = 0;
  double threshold = 0.0;
  double coverage = 0.0;
  const CrudeResult* crude = nullptr;
  const FineResult* fine = nullptr;
  const PolicySet* survivors = nullptr;
};

struct SdpPeOptions {
  double C = 1.0;
  std::optional<double> C_K;
  double C1 = 6.0;
  int c = 3;
  double delta = 0.05;
  CoverageOptions coverage;
  std::function<void(const StageReport&)> observer;
};

struct SdpPeResult {
  RegretTrace trace;
  PolicySet final_active;
  std::vector<StageReport> stages;  // pointer fields cleared
};

SdpPeResult run_sdp_pe(const MdpSpec& env, std::int64_t T, const Privatizer& privatizer,
                       const SdpPeOptions& options, std::uint64_t seed);

}  // namespace sdppe
