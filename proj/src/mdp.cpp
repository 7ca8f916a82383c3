#include "sdppe/mdp.hpp"

#include <cmath>
#include <string>

#include "sdppe/error.hpp"

namespace sdppe {
namespace {

std::string tuple_path(const char* name, int h, int s, int a) {
  return std::string(name) + "[" + std::to_string(h) + "][" + std::to_string(s) + "][" +
         std::to_string(a) + "]";
}

void check_shapes(int policy_states, int policy_horizon, const TransitionModel& model,
                  const RewardFunction& reward, const Eigen::VectorXd& initial) {
  const int S = model.num_states();
  if (policy_states != S || policy_horizon != model.horizon()) {
    throw DimensionError("policy is " + std::to_string(policy_horizon) + "x" +
                         std::to_string(policy_states) + " but model is " +
                         std::to_string(model.horizon()) + "x" + std::to_string(S));
  }
  if (reward.num_states() != S || reward.num_actions() != model.num_actions() ||
      reward.horizon() != model.horizon()) {
    throw DimensionError("reward shape does not match model");
  }
  if (initial.size() != S) {
    throw DimensionError("initial distribution has " + std::to_string(initial.size()) +
                         " entries, expected " + std::to_string(S));
  }
}

void check_actions(const DeterministicPolicy& policy, int actions) {
  for (int a : policy.table()) {
    if (a < 0 || a >= actions) {
      throw DimensionError("policy action " + std::to_string(a) + " outside [0, " +
                           std::to_string(actions) + ")");
    }
  }
}

}  // namespace

TransitionModel::TransitionModel(int states, int actions, int horizon, bool absorbing)
    : states_(states), actions_(actions), horizon_(horizon), absorbing_(absorbing) {
  if (states <= 0 || actions <= 0 || horizon <= 0) {
    throw DimensionError("model dimensions must be positive");
  }
  kernels_.assign(static_cast<std::size_t>(horizon) * static_cast<std::size_t>(actions),
                  Eigen::MatrixXd::Zero(states, num_targets()));
  if (absorbing_) {
    for (auto& k : kernels_) k.col(states_).setOnes();
  }
}

double TransitionModel::prob(int h, int s, int a, int next) const {
  if (absorbing_ && s == states_) return next == states_ ? 1.0 : 0.0;
  return kernel(h, a)(s, next);
}

void TransitionModel::validate(double tol) const {
  for (int h = 0; h < horizon_; ++h) {
    for (int a = 0; a < actions_; ++a) {
      const Eigen::MatrixXd& k = kernel(h, a);
      for (int s = 0; s < states_; ++s) {
        if ((k.row(s).array() < 0.0).any() || !k.row(s).allFinite()) {
          throw DomainError(tuple_path("transitions", h, s, a) + ": negative or non-finite entry");
        }
        const double total = k.row(s).sum();
        if (std::abs(total - 1.0) > tol) {
          throw DomainError(tuple_path("transitions", h, s, a) + ": sums to " +
                            std::to_string(total));
        }
      }
    }
  }
}

int TransitionModel::renormalize(double drift) {
  int touched = 0;
  for (auto& k : kernels_) {
    for (Eigen::Index s = 0; s < k.rows(); ++s) {
      const double total = k.row(s).sum();
      if (total > 0.0 && std::abs(total - 1.0) > drift) {
        k.row(s) /= total;
        ++touched;
      }
    }
  }
  return touched;
}

RewardFunction::RewardFunction(int states, int actions, int horizon)
    : states_(states), actions_(actions) {
  if (states <= 0 || actions <= 0 || horizon <= 0) {
    throw DimensionError("reward dimensions must be positive");
  }
  tables_.assign(static_cast<std::size_t>(horizon), Eigen::MatrixXd::Zero(states, actions));
}

RewardFunction RewardFunction::indicator(int states, int actions, int horizon, int h, int s,
                                         int a) {
  RewardFunction r(states, actions, horizon);
  r.at(h)(s, a) = 1.0;
  return r;
}

void MdpSpec::validate() const {
  transitions.validate();
  if (transitions.has_absorbing()) {
    throw DomainError("an MDP specification cannot contain the absorbing state");
  }
  const int S = num_states();
  const int A = num_actions();
  if (rewards.num_states() != S || rewards.num_actions() != A ||
      rewards.horizon() != horizon()) {
    throw DimensionError("reward table shape does not match transitions");
  }
  for (int h = 0; h < horizon(); ++h) {
    for (int s = 0; s < S; ++s) {
      for (int a = 0; a < A; ++a) {
        const double r = rewards(h, s, a);
        if (!(r >= 0.0 && r <= 1.0)) {
          throw DomainError(tuple_path("rewards", h, s, a) + ": mean outside [0, 1]");
        }
      }
    }
  }
  if (initial.size() != S) throw DimensionError("initial distribution has wrong length");
  if ((initial.array() < 0.0).any() || std::abs(initial.sum() - 1.0) > 1e-9) {
    throw DomainError("initial: not a probability vector");
  }
}

DeterministicPolicy::DeterministicPolicy(int states, int horizon, int fill)
    : states_(states),
      horizon_(horizon),
      actions_(static_cast<std::size_t>(states) * static_cast<std::size_t>(horizon), fill) {}

DeterministicPolicy::DeterministicPolicy(int states, int horizon, std::vector<int> actions)
    : states_(states), horizon_(horizon), actions_(std::move(actions)) {
  if (actions_.size() != static_cast<std::size_t>(states) * static_cast<std::size_t>(horizon)) {
    throw DimensionError("policy table must have H*S entries");
  }
}

DeterministicPolicy DeterministicPolicy::from_id(PolicyId id, int states, int actions,
                                                 int horizon) {
  DeterministicPolicy policy(states, horizon);
  const auto base = static_cast<PolicyId>(actions);
  for (std::size_t i = policy.actions_.size(); i-- > 0;) {
    policy.actions_[i] = static_cast<int>(id % base);
    id /= base;
  }
  return policy;
}

PolicyId DeterministicPolicy::id(int actions) const {
  PolicyId id = 0;
  for (int a : actions_) id = id * static_cast<PolicyId>(actions) + static_cast<PolicyId>(a);
  return id;
}

PolicyMixture PolicyMixture::point(DeterministicPolicy policy) {
  PolicyMixture m;
  m.components.push_back(std::move(policy));
  m.weights.push_back(1.0);
  return m;
}

PolicyMixture PolicyMixture::uniform(std::vector<DeterministicPolicy> policies) {
  PolicyMixture m;
  const double w = 1.0 / static_cast<double>(policies.size());
  m.weights.assign(policies.size(), w);
  m.components = std::move(policies);
  return m;
}

void PolicyMixture::validate() const {
  if (components.empty()) throw DomainError("mixture has no components");
  if (components.size() != weights.size()) {
    throw DimensionError("mixture weights and components differ in length");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw DomainError("mixture weight is negative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw DomainError("mixture weights do not sum to one");
}

ValueResult evaluate_policy(const DeterministicPolicy& policy, const TransitionModel& model,
                            const RewardFunction& reward, const Eigen::VectorXd& initial,
                            bool with_q) {
  check_shapes(policy.num_states(), policy.horizon(), model, reward, initial);
  check_actions(policy, model.num_actions());
  const int S = model.num_states();
  const int A = model.num_actions();
  const int H = model.horizon();

  ValueResult out;
  out.values = Eigen::MatrixXd::Zero(H + 1, S);
  if (with_q) out.q.assign(static_cast<std::size_t>(H), Eigen::MatrixXd::Zero(S, A));
  Eigen::VectorXd next = Eigen::VectorXd::Zero(model.num_targets());
  for (int h = H - 1; h >= 0; --h) {
    if (with_q) {
      for (int a = 0; a < A; ++a) {
        out.q[static_cast<std::size_t>(h)].col(a) = reward.at(h).col(a) + model.kernel(h, a) * next;
      }
    }
    for (int s = 0; s < S; ++s) {
      const int a = policy.action(h, s);
      out.values(h, s) = reward(h, s, a) + model.kernel(h, a).row(s).dot(next);
    }
    next.head(S) = out.values.row(h).transpose();
  }
  out.initial_value = initial.dot(out.values.row(0).transpose());
  return out;
}

ValueResult evaluate_policy(const PolicyMixture& policy, const TransitionModel& model,
                            const RewardFunction& reward, const Eigen::VectorXd& initial) {
  policy.validate();
  ValueResult out;
  out.values = Eigen::MatrixXd::Zero(model.horizon() + 1, model.num_states());
  for (std::size_t i = 0; i < policy.components.size(); ++i) {
    const ValueResult part = evaluate_policy(policy.components[i], model, reward, initial);
    out.values += policy.weights[i] * part.values;
    out.initial_value += policy.weights[i] * part.initial_value;
  }
  return out;
}

OptimalResult optimal_values(const TransitionModel& model, const RewardFunction& reward,
                             const Eigen::VectorXd& initial) {
  const int S = model.num_states();
  const int A = model.num_actions();
  const int H = model.horizon();
  check_shapes(S, H, model, reward, initial);

  OptimalResult out;
  out.greedy = DeterministicPolicy(S, H);
  out.values.values = Eigen::MatrixXd::Zero(H + 1, S);
  out.values.q.assign(static_cast<std::size_t>(H), Eigen::MatrixXd::Zero(S, A));
  Eigen::VectorXd next = Eigen::VectorXd::Zero(model.num_targets());
  for (int h = H - 1; h >= 0; --h) {
    Eigen::MatrixXd& q = out.values.q[static_cast<std::size_t>(h)];
    for (int a = 0; a < A; ++a) q.col(a) = reward.at(h).col(a) + model.kernel(h, a) * next;
    for (int s = 0; s < S; ++s) {
      int best = 0;
      for (int a = 1; a < A; ++a) {
        if (q(s, a) > q(s, best)) best = a;
      }
      out.greedy.set(h, s, best);
      out.values.values(h, s) = q(s, best);
    }
    next.head(S) = out.values.values.row(h).transpose();
  }
  out.values.initial_value = initial.dot(out.values.values.row(0).transpose());
  return out;
}

Occupancy occupancy_all(const DeterministicPolicy& policy, const TransitionModel& model,
                        const Eigen::VectorXd& initial) {
  const int S = model.num_states();
  const int A = model.num_actions();
  const int H = model.horizon();
  if (policy.num_states() != S || policy.horizon() != H) {
    throw DimensionError("policy shape does not match model");
  }
  if (initial.size() != S) throw DimensionError("initial distribution has wrong length");
  check_actions(policy, A);

  Occupancy occ(static_cast<std::size_t>(H), Eigen::MatrixXd::Zero(S, A));
  Eigen::VectorXd dist = initial;
  for (int h = 0; h < H; ++h) {
    Eigen::VectorXd next = Eigen::VectorXd::Zero(S);
    for (int s = 0; s < S; ++s) {
      if (dist(s) == 0.0) continue;
      const int a = policy.action(h, s);
      occ[static_cast<std::size_t>(h)](s, a) = dist(s);
      next += dist(s) * model.kernel(h, a).row(s).head(S).transpose();
    }
    dist = std::move(next);
  }
  return occ;
}

Occupancy occupancy_all(const PolicyMixture& policy, const TransitionModel& model,
                        const Eigen::VectorXd& initial) {
  policy.validate();
  Occupancy occ(static_cast<std::size_t>(model.horizon()),
                Eigen::MatrixXd::Zero(model.num_states(), model.num_actions()));
  for (std::size_t i = 0; i < policy.components.size(); ++i) {
    const Occupancy part = occupancy_all(policy.components[i], model, initial);
    for (std::size_t h = 0; h < occ.size(); ++h) occ[h] += policy.weights[i] * part[h];
  }
  return occ;
}

std::uint64_t policy_count(int states, int actions, int horizon, std::uint64_t cap) {
  if (states <= 0 || actions <= 0 || horizon <= 0) {
    throw DimensionError("policy dimensions must be positive");
  }
  std::uint64_t count = 1;
  const auto digits = static_cast<std::uint64_t>(states) * static_cast<std::uint64_t>(horizon);
  for (std::uint64_t i = 0; i < digits; ++i) {
    if (count > cap / static_cast<std::uint64_t>(actions)) {
      throw InstanceTooLarge("A^(S*H) = " + std::to_string(actions) + "^" +
                             std::to_string(digits) + " exceeds the policy cap of " +
                             std::to_string(cap));
    }
    count *= static_cast<std::uint64_t>(actions);
  }
  return count;
}

PolicyEnumeration::iterator::iterator(const PolicyEnumeration* owner, PolicyId id)
    : owner_(owner), id_(id) {
  if (id_ < owner_->count_) {
    current_ = DeterministicPolicy::from_id(id_, owner_->states_, owner_->actions_,
                                            owner_->horizon_);
  }
}

PolicyEnumeration::iterator& PolicyEnumeration::iterator::operator++() {
  *this = iterator(owner_, id_ + 1);
  return *this;
}

PolicyEnumeration enumerate_policies(int states, int actions, int horizon, std::uint64_t cap) {
  return PolicyEnumeration(states, actions, horizon, policy_count(states, actions, horizon, cap));
}

}  // namespace sdppe
