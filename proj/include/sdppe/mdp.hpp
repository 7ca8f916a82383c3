#pragma once

// Tabular episodic MDPs: transition kernels, reward tables, deterministic and
// mixed policies, and exact finite-horizon dynamic programming over them.
//
// Steps are 0-based in code (h = 0..H-1); value row H is the terminal zero.

#include <Eigen/Dense>

#include <cstdint>
#include <iterator>
#include <vector>

namespace sdppe {

using PolicyId = std::uint64_t;

inline constexpr std::uint64_t kDefaultPolicyCap = std::uint64_t{1} << 22;

/// Step-indexed transition kernels p_h(. | s, a) over S real states.
///
/// An absorbing model carries one extra target column, the absorbing state
/// x† (index S). Its own row is implicit: every action self-loops with
/// probability one and earns nothing, so x† always has value zero.
class TransitionModel {
 public:
  TransitionModel() = default;
  /// Regular kernels start at zero and must be filled. Absorbing kernels start
  /// with every row sending all mass to x†.
  TransitionModel(int states, int actions, int horizon, bool absorbing = false);

  int num_states() const { return states_; }
  int num_actions() const { return actions_; }
  int horizon() const { return horizon_; }
  bool has_absorbing() const { return absorbing_; }
  int absorbing_state() const { return states_; }
  int num_targets() const { return states_ + (absorbing_ ? 1 : 0); }

  /// S x num_targets() matrix whose row s is p_h(. | s, a).
  Eigen::MatrixXd& kernel(int h, int a) { return kernels_[index(h, a)]; }
  const Eigen::MatrixXd& kernel(int h, int a) const { return kernels_[index(h, a)]; }

  /// p_h(next | s, a); `s` may be x† on absorbing models.
  double prob(int h, int s, int a, int next) const;

  /// Throws DomainError naming `transitions[h][s][a]` for a row that has a
  /// negative entry or does not sum to one within `tol`.
  void validate(double tol = 1e-9) const;

  /// Rescales rows that drifted more than `drift` from unit mass. Returns the
  /// number of rows touched.
  int renormalize(double drift = 1e-12);

 private:
  std::size_t index(int h, int a) const {
    return static_cast<std::size_t>(h) * static_cast<std::size_t>(actions_) +
           static_cast<std::size_t>(a);
  }

  int states_ = 0;
  int actions_ = 0;
  int horizon_ = 0;
  bool absorbing_ = false;
  std::vector<Eigen::MatrixXd> kernels_;
};

/// Per-step reward table r'_h(s, a); any finite non-negative value.
class RewardFunction {
 public:
  RewardFunction() = default;
  RewardFunction(int states, int actions, int horizon);

  /// The reward 1_{h,s,a}: one at (h, s, a) and zero elsewhere.
  static RewardFunction indicator(int states, int actions, int horizon, int h, int s, int a);

  int num_states() const { return states_; }
  int num_actions() const { return actions_; }
  int horizon() const { return static_cast<int>(tables_.size()); }

  Eigen::MatrixXd& at(int h) { return tables_[static_cast<std::size_t>(h)]; }
  const Eigen::MatrixXd& at(int h) const { return tables_[static_cast<std::size_t>(h)]; }
  double operator()(int h, int s, int a) const { return at(h)(s, a); }

 private:
  int states_ = 0;
  int actions_ = 0;
  std::vector<Eigen::MatrixXd> tables_;
};

/// A full episodic MDP with Bernoulli reward means.
struct MdpSpec {
  TransitionModel transitions;
  RewardFunction rewards;
  Eigen::VectorXd initial;

  int num_states() const { return transitions.num_states(); }
  int num_actions() const { return transitions.num_actions(); }
  int horizon() const { return transitions.horizon(); }

  /// Shape checks, row sums within 1e-9, reward means in [0, 1].
  void validate() const;
};

/// Table pi_h(s) for every step and state.
class DeterministicPolicy {
 public:
  DeterministicPolicy() = default;
  DeterministicPolicy(int states, int horizon, int fill = 0);
  DeterministicPolicy(int states, int horizon, std::vector<int> actions);

  int num_states() const { return states_; }
  int horizon() const { return horizon_; }
  int action(int h, int s) const { return actions_[flat(h, s)]; }
  void set(int h, int s, int a) { actions_[flat(h, s)] = a; }
  const std::vector<int>& table() const { return actions_; }

  /// Lexicographic numbering of all A^(S*H) tables: the (h=0, s=0) entry is
  /// the most significant base-A digit, (h=H-1, s=S-1) the least.
  static DeterministicPolicy from_id(PolicyId id, int states, int actions, int horizon);
  PolicyId id(int actions) const;

  friend bool operator==(const DeterministicPolicy&, const DeterministicPolicy&) = default;

 private:
  std::size_t flat(int h, int s) const {
    return static_cast<std::size_t>(h) * static_cast<std::size_t>(states_) +
           static_cast<std::size_t>(s);
  }

  int states_ = 0;
  int horizon_ = 0;
  std::vector<int> actions_;
};

/// Distribution over deterministic policies; one component is drawn per
/// episode.
struct PolicyMixture {
  std::vector<DeterministicPolicy> components;
  std::vector<double> weights;

  static PolicyMixture point(DeterministicPolicy policy);
  /// Equal weight per entry; repeated entries keep their multiplicity.
  static PolicyMixture uniform(std::vector<DeterministicPolicy> policies);

  void validate() const;
};

struct ValueResult {
  Eigen::MatrixXd values;          // (H + 1) x S, last row zero
  std::vector<Eigen::MatrixXd> q;  // per step S x A; empty unless requested
  double initial_value = 0.0;
};

ValueResult evaluate_policy(const DeterministicPolicy& policy, const TransitionModel& model,
                            const RewardFunction& reward, const Eigen::VectorXd& initial,
                            bool with_q = false);

/// Weighted average of the component values.
ValueResult evaluate_policy(const PolicyMixture& policy, const TransitionModel& model,
                            const RewardFunction& reward, const Eigen::VectorXd& initial);

struct OptimalResult {
  ValueResult values;  // with Q*
  DeterministicPolicy greedy;
};

/// Backward induction with greedy action selection; ties go to the lowest
/// action index.
OptimalResult optimal_values(const TransitionModel& model, const RewardFunction& reward,
                             const Eigen::VectorXd& initial);

/// occupancy[h](s, a) = P(s_h = s, a_h = a). Mass that reached x† is not
/// counted, so per-step totals can fall below one on absorbing models.
using Occupancy = std::vector<Eigen::MatrixXd>;

Occupancy occupancy_all(const DeterministicPolicy& policy, const TransitionModel& model,
                        const Eigen::VectorXd& initial);
Occupancy occupancy_all(const PolicyMixture& policy, const TransitionModel& model,
                        const Eigen::VectorXd& initial);

/// A^(S*H), or InstanceTooLarge when it exceeds `cap`.
std::uint64_t policy_count(int states, int actions, int horizon,
                           std::uint64_t cap = kDefaultPolicyCap);

/// Range over every deterministic policy in id order.
class PolicyEnumeration {
 public:
  class iterator {
   public:
    using iterator_category = std::input_iterator_tag;
    using value_type = DeterministicPolicy;
    using difference_type = std::ptrdiff_t;
    using pointer = const DeterministicPolicy*;
    using reference = const DeterministicPolicy&;

    iterator() = default;
    iterator(const PolicyEnumeration* owner, PolicyId id);

    reference operator*() const { return current_; }
    pointer operator->() const { return &current_; }
    iterator& operator++();
    iterator operator++(int) {
      iterator copy = *this;
      ++*this;
      return copy;
    }
    friend bool operator==(const iterator& a, const iterator& b) { return a.id_ == b.id_; }

   private:
    const PolicyEnumeration* owner_ = nullptr;
    PolicyId id_ = 0;
    DeterministicPolicy current_;
  };

  PolicyEnumeration(int states, int actions, int horizon, std::uint64_t count)
      : states_(states), actions_(actions), horizon_(horizon), count_(count) {}

  iterator begin() const { return iterator(this, 0); }
  iterator end() const { return iterator(this, count_); }
  std::uint64_t size() const { return count_; }

 private:
  friend class iterator;
  int states_;
  int actions_;
  int horizon_;
  std::uint64_t count_;
};

PolicyEnumeration enumerate_policies(int states, int actions, int horizon,
                                     std::uint64_t cap = kDefaultPolicyCap);

}  // namespace sdppe
