#include "sdppe/privatizer.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <string>

#include "sdppe/error.hpp"

namespace sdppe {
namespace {

// Fixed left-to-right summation, so that a released total equals the sum of
// its parts bit for bit wherever the same loop is used.
double ordered_sum(const Eigen::VectorXd& v) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += v(i);
  return s;
}

// Unbiased integer in [0, bound) by rejection.
std::uint64_t uniform_below(Rng& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % bound;
}

double log_binomial_pmf(std::int64_t k, std::int64_t n, double log_p, double log_q) {
  if (k < 0 || k > n) return -std::numeric_limits<double>::infinity();
  const double kd = static_cast<double>(k);
  const double nd = static_cast<double>(n);
  return std::lgamma(nd + 1.0) - std::lgamma(kd + 1.0) - std::lgamma(nd - kd + 1.0) +
         kd * log_p + (nd - kd) * log_q;
}

// Smallest t >= 0 with sum_i max(0, v_i - t) <= upper (upper >= 0).
double lower_sum_threshold(const Eigen::VectorXd& v, double upper) {
  std::vector<double> pos;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (v(i) > 0.0) pos.push_back(v(i));
  }
  double total = std::accumulate(pos.begin(), pos.end(), 0.0);
  if (total <= upper) return 0.0;
  std::sort(pos.begin(), pos.end(), std::greater<>());
  double prefix = 0.0;
  for (std::size_t j = 0; j < pos.size(); ++j) {
    prefix += pos[j];
    const double next = j + 1 < pos.size() ? pos[j + 1] : 0.0;
    const double count = static_cast<double>(j + 1);
    if (prefix - count * next > upper) return (prefix - upper) / count;
  }
  return (prefix - upper) / static_cast<double>(pos.size());
}

void check_batch_shape(std::span<const Trajectory> batch, int horizon, int states, int actions) {
  for (const Trajectory& traj : batch) {
    if (static_cast<int>(traj.steps.size()) != horizon) {
      throw DimensionError("trajectory length " + std::to_string(traj.steps.size()) +
                           " does not match horizon " + std::to_string(horizon));
    }
    for (const Step& st : traj.steps) {
      if (st.state < 0 || st.state >= states || st.next_state < 0 || st.next_state >= states ||
          st.action < 0 || st.action >= actions) {
        throw DimensionError("trajectory step outside the state or action range");
      }
    }
  }
}

}  // namespace

void PrivacyBudget::validate() const {
  if (horizon < 1 || states < 1 || actions < 1) {
    throw DomainError("privacy budget: dimensions must be positive");
  }
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    throw DomainError("privacy budget: epsilon must be positive");
  }
  if (!(counter_epsilon() < 1.0)) {
    throw DomainError("privacy budget: epsilon / (3H) must be below 1");
  }
  if (!(delta > 0.0 && delta < 1.0)) throw DomainError("privacy budget: delta must lie in (0, 1)");
}

std::int64_t compute_tau(double counter_epsilon, double counter_delta) {
  if (!(counter_epsilon > 0.0 && counter_epsilon < 1.0)) {
    throw DomainError("compute_tau: epsilon' must lie in (0, 1)");
  }
  if (!(counter_delta > 0.0 && counter_delta < 1.0)) {
    throw DomainError("compute_tau: delta' must lie in (0, 1)");
  }
  const double a = 96.0 * std::log(2.0 / counter_delta) / (counter_epsilon * counter_epsilon);
  const double b = 8.0 / counter_epsilon;
  const double tau = std::ceil(std::max(a, b));
  if (tau > 4.0e18) throw DomainError("compute_tau: tau overflows");
  return static_cast<std::int64_t>(tau);
}

NoiseConfig NoiseConfig::make(std::int64_t tau, std::int64_t batch_size) {
  if (tau < 1) throw DomainError("noise config: tau must be positive");
  if (batch_size < 1) throw DomainError("noise config: empty batch");
  NoiseConfig cfg;
  cfg.tau = tau;
  cfg.batch_size = batch_size;
  if (batch_size <= tau) {
    cfg.regime = NoiseRegime::kSmallBatch;
    cfg.bits_per_user = (tau + batch_size - 1) / batch_size;
  } else {
    cfg.regime = NoiseRegime::kLargeBatch;
    cfg.bits_per_user = 1;
    cfg.bernoulli_p = static_cast<double>(tau) / (2.0 * static_cast<double>(batch_size));
  }
  return cfg;
}

std::int64_t NoiseConfig::noise_trials() const {
  return regime == NoiseRegime::kSmallBatch ? bits_per_user * batch_size : batch_size;
}

double NoiseConfig::noise_success() const {
  return regime == NoiseRegime::kSmallBatch ? 0.5 : bernoulli_p;
}

double NoiseConfig::expected_noise() const {
  if (regime == NoiseRegime::kSmallBatch) {
    return static_cast<double>(bits_per_user) * static_cast<double>(batch_size) / 2.0;
  }
  return static_cast<double>(tau) / 2.0;
}

double NoiseConfig::noise_variance() const {
  const double p = noise_success();
  return static_cast<double>(noise_trials()) * p * (1.0 - p);
}

std::int64_t randomize(int datum, const NoiseConfig& cfg, NoiseSource& noise) {
  if (datum != 0 && datum != 1) throw DomainError("randomize: datum must be 0 or 1");
  const std::int64_t extra = cfg.regime == NoiseRegime::kSmallBatch
                                 ? noise.fair_bits(cfg.bits_per_user)
                                 : noise.biased_bit(cfg.bernoulli_p);
  return datum + extra;
}

std::vector<std::int64_t> shuffle(std::vector<std::int64_t> messages, Rng& rng) {
  for (std::size_t i = messages.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(uniform_below(rng, i));
    std::swap(messages[i - 1], messages[j]);
  }
  return messages;
}

double analyze(std::span<const std::int64_t> messages, std::int64_t n, const NoiseConfig& cfg) {
  if (n != cfg.batch_size || static_cast<std::int64_t>(messages.size()) != n) {
    throw DimensionError("analyze: message count does not match the batch size");
  }
  std::int64_t sum = 0;
  for (std::int64_t z : messages) sum += z;
  return static_cast<double>(sum) - cfg.expected_noise();
}

double release_counter(std::span<const std::uint8_t> bits, const NoiseConfig& cfg,
                       NoiseSource& noise, Rng& shuffle_rng) {
  std::vector<std::int64_t> messages;
  messages.reserve(bits.size());
  for (std::uint8_t b : bits) messages.push_back(randomize(b, cfg, noise));
  messages = shuffle(std::move(messages), shuffle_rng);
  return analyze(messages, static_cast<std::int64_t>(messages.size()), cfg);
}

RepairResult repair_counts(const Eigen::VectorXd& noisy, double total, double K) {
  if (!(K >= 0.0)) throw DomainError("repair_counts: K must be nonnegative");
  const Eigen::Index d = noisy.size();
  if (d == 0) throw DimensionError("repair_counts: empty count vector");
  const double kappa = K / 4.0;
  const double lo_band = total - kappa;
  const double hi_band = total + kappa;

  RepairResult out;
  if (hi_band < 0.0) {
    out.counts = Eigen::VectorXd::Zero(d);
    out.t = noisy.cwiseAbs().maxCoeff();
    return out;
  }

  const double t_a = std::max(0.0, -noisy.minCoeff());
  const double t_b = lower_sum_threshold(noisy, hi_band);
  const double t_c = (lo_band - ordered_sum(noisy)) / static_cast<double>(d);
  const double t = std::max({t_a, t_b, t_c, 0.0});

  Eigen::VectorXd lower(d), upper(d), base(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    lower(i) = std::max(0.0, noisy(i) - t);
    upper(i) = noisy(i) + t;
    base(i) = std::clamp(noisy(i), lower(i), upper(i));
  }
  const double sum = ordered_sum(base);
  if (sum > hi_band) {
    const Eigen::VectorXd slack = base - lower;
    const double room = ordered_sum(slack);
    const double ratio = room > 0.0 ? (sum - hi_band) / room : 0.0;
    base = ratio >= 1.0 ? lower : Eigen::VectorXd(base - ratio * slack);
  } else if (sum < lo_band) {
    const Eigen::VectorXd slack = upper - base;
    const double room = ordered_sum(slack);
    const double ratio = room > 0.0 ? (lo_band - sum) / room : 0.0;
    base = ratio >= 1.0 ? upper : Eigen::VectorXd(base + ratio * slack);
  }
  out.counts = base.cwiseMax(0.0);
  out.t = t;
  return out;
}

ShiftedCounts optimistic_shift(const Eigen::VectorXd& repaired, double K, int S) {
  if (S < 1 || repaired.size() != S) throw DimensionError("optimistic_shift: size mismatch");
  if (!(K >= 0.0)) throw DomainError("optimistic_shift: K must be nonnegative");
  ShiftedCounts out;
  out.per_successor = repaired.array() + K / (2.0 * S);
  out.total = ordered_sum(out.per_successor);
  return out;
}

CountTable::CountTable(int horizon, int states, int actions)
    : horizon_(horizon), states_(states), actions_(actions) {
  if (horizon < 1 || states < 1 || actions < 1) throw DimensionError("count table: bad shape");
  visits_.assign(static_cast<std::size_t>(horizon), Eigen::MatrixXd::Zero(states, actions));
  rewards_.assign(static_cast<std::size_t>(horizon), Eigen::MatrixXd::Zero(states, actions));
  transitions_.assign(static_cast<std::size_t>(horizon) * static_cast<std::size_t>(actions),
                      Eigen::MatrixXd::Zero(states, states));
}

RawBatchCounts RawBatchCounts::from(std::span<const Trajectory> batch, int horizon, int states,
                                    int actions) {
  check_batch_shape(batch, horizon, states, actions);
  RawBatchCounts out{CountTable(horizon, states, actions),
                     static_cast<std::int64_t>(batch.size())};
  for (const Trajectory& traj : batch) {
    for (int h = 0; h < horizon; ++h) {
      const Step& st = traj.steps[static_cast<std::size_t>(h)];
      out.counts.visit(h, st.state, st.action) += 1.0;
      out.counts.transition(h, st.state, st.action, st.next_state) += 1.0;
      out.counts.reward(h, st.state, st.action) += st.reward;
    }
  }
  return out;
}

PrivateCounts ExactPrivatizer::privatize(std::span<const Trajectory> batch, int horizon,
                                         int states, int actions, Rng&) const {
  RawBatchCounts raw = RawBatchCounts::from(batch, horizon, states, actions);
  PrivateCounts out;
  out.counts = raw.counts;
  out.analyzer = std::move(raw.counts);
  out.users = raw.users;
  return out;
}

double precision_from_tau(std::int64_t tau, const PrivacyBudget& budget,
                          std::int64_t total_episodes) {
  if (total_episodes < 1) throw DomainError("precision: T must be positive");
  const double H = budget.horizon, S = budget.states, A = budget.actions;
  const double arg = 2.0 * H * S * S * A * static_cast<double>(total_episodes) / budget.delta;
  return 4.0 * std::sqrt(3.0 * static_cast<double>(tau) * std::log(arg));
}

ShufflePrivatizer::ShufflePrivatizer(PrivatizerConfig config) : config_(std::move(config)) {
  config_.budget.validate();
  if (config_.tau) {
    if (*config_.tau < 1) throw DomainError("privatizer: tau override must be positive");
    tau_ = *config_.tau;
  } else {
    tau_ = compute_tau(config_.budget.counter_epsilon(), config_.budget.counter_delta());
  }
  if (!(config_.K_scale > 0.0)) throw DomainError("privatizer: K_scale must be positive");
  if (config_.K) {
    if (!(*config_.K >= 0.0)) throw DomainError("privatizer: K override must be nonnegative");
    K_ = *config_.K;
  } else {
    K_ = config_.K_scale * precision_from_tau(tau_, config_.budget, config_.total_episodes);
  }
}

PrivateCounts ShufflePrivatizer::privatize(std::span<const Trajectory> batch, int horizon,
                                           int states, int actions, Rng& rng) const {
  const PrivacyBudget& b = config_.budget;
  if (horizon != b.horizon || states != b.states || actions != b.actions) {
    throw DimensionError("privatizer: batch shape differs from the configured budget");
  }
  if (batch.empty()) throw DomainError("privatizer: empty batch");
  check_batch_shape(batch, horizon, states, actions);

  const std::int64_t n = static_cast<std::int64_t>(batch.size());
  const NoiseConfig cfg = NoiseConfig::make(tau_, n);
  RngNoise rng_noise(rng);
  FixedNoise no_noise(0);
  NoiseSource& noise =
      noise_free_ ? static_cast<NoiseSource&>(no_noise) : static_cast<NoiseSource&>(rng_noise);
  const double centering = noise_free_ ? cfg.expected_noise() : 0.0;

  PrivateCounts out;
  out.counts = CountTable(horizon, states, actions);
  out.analyzer = CountTable(horizon, states, actions);
  out.K = K_;
  out.E = K_;
  out.users = n;

  const std::size_t un = static_cast<std::size_t>(n);
  std::vector<std::uint8_t> visit_bits(un), reward_bits(un), next_bits(un);
  for (int h = 0; h < horizon; ++h) {
    for (int s = 0; s < states; ++s) {
      for (int a = 0; a < actions; ++a) {
        for (std::size_t i = 0; i < un; ++i) {
          const Step& st = batch[i].steps[static_cast<std::size_t>(h)];
          const bool hit = st.state == s && st.action == a;
          visit_bits[i] = hit ? 1 : 0;
          reward_bits[i] = hit && st.reward != 0 ? 1 : 0;
        }
        const double noisy_visit = release_counter(visit_bits, cfg, noise, rng) + centering;
        Eigen::VectorXd noisy_next(states);
        for (int s2 = 0; s2 < states; ++s2) {
          for (std::size_t i = 0; i < un; ++i) {
            const Step& st = batch[i].steps[static_cast<std::size_t>(h)];
            next_bits[i] = visit_bits[i] && st.next_state == s2 ? 1 : 0;
          }
          noisy_next(s2) = release_counter(next_bits, cfg, noise, rng) + centering;
        }
        const double noisy_reward = release_counter(reward_bits, cfg, noise, rng) + centering;

        out.analyzer.visit(h, s, a) = noisy_visit;
        out.analyzer.reward(h, s, a) = noisy_reward;
        for (int s2 = 0; s2 < states; ++s2) out.analyzer.transition(h, s, a, s2) = noisy_next(s2);

        const RepairResult repaired = repair_counts(noisy_next, noisy_visit, K_);
        const ShiftedCounts shifted = optimistic_shift(repaired.counts, K_, states);
        for (int s2 = 0; s2 < states; ++s2) {
          out.counts.transition(h, s, a, s2) = shifted.per_successor(s2);
        }
        out.counts.visit(h, s, a) = shifted.total;
        out.counts.reward(h, s, a) = std::clamp(noisy_reward, 0.0, shifted.total);
      }
    }
  }
  return out;
}

PrivateCounts privatize_batch(std::span<const Trajectory> batch, const PrivatizerConfig& config,
                              Rng& rng) {
  const ShufflePrivatizer privatizer(config);
  return privatizer.privatize(batch, config.budget.horizon, config.budget.states,
                              config.budget.actions, rng);
}

AssumptionReport check_private_counts(const RawBatchCounts& truth, const PrivateCounts& released) {
  const CountTable& t = truth.counts;
  const CountTable& r = released.counts;
  const CountTable& z = released.analyzer;
  const int H = t.horizon(), S = t.num_states(), A = t.num_actions();
  if (r.horizon() != H || r.num_states() != S || r.num_actions() != A) {
    throw DimensionError("check_private_counts: shape mismatch");
  }
  const double K = released.K;
  const double E = released.E;
  AssumptionReport rep;
  for (int h = 0; h < H; ++h) {
    for (int s = 0; s < S; ++s) {
      for (int a = 0; a < A; ++a) {
        const Eigen::VectorXd succ = r.successors(h, s, a);
        if (r.visit(h, s, a) != ordered_sum(succ)) rep.consistent = false;
        if ((succ.array() <= 0.0).any()) rep.positive = false;

        if (std::abs(z.visit(h, s, a) - t.visit(h, s, a)) > K / 4.0) rep.error_event = false;
        if (std::abs(z.reward(h, s, a) - t.reward(h, s, a)) > E / 4.0) rep.error_event = false;
        if (r.visit(h, s, a) < t.visit(h, s, a)) rep.never_under = false;
        if (std::abs(r.visit(h, s, a) - t.visit(h, s, a)) > K) rep.visits_within_K = false;
        if (std::abs(r.reward(h, s, a) - t.reward(h, s, a)) > E) rep.rewards_within_E = false;
        for (int s2 = 0; s2 < S; ++s2) {
          const double truth_ss = t.transition(h, s, a, s2);
          if (std::abs(z.transition(h, s, a, s2) - truth_ss) > K / 4.0) rep.error_event = false;
          if (std::abs(succ(s2) - truth_ss) > K) rep.transitions_within_K = false;
        }
      }
    }
  }
  return rep;
}

AuditResult audit_hockey_stick(const NoiseConfig& cfg, double counter_epsilon,
                               int input_difference) {
  if (!(counter_epsilon >= 0.0)) throw DomainError("audit: epsilon must be nonnegative");
  if (input_difference != 0 && input_difference != 1) {
    throw DomainError("audit: inputs must differ by 0 or 1");
  }
  const std::int64_t N = cfg.noise_trials();
  if (N + 2 > kAuditSupportLimit) {
    throw DomainError("audit: noise support of " + std::to_string(N + 2) +
                      " points exceeds the enumeration limit");
  }
  const double p = cfg.noise_success();
  if (!(p > 0.0 && p < 1.0)) throw DomainError("audit: degenerate noise distribution");
  const double log_p = std::log(p);
  const double log_q = std::log1p(-p);

  // Outputs differ only through the shifted noise sum: Q versus Q + difference.
  long double forward = 0.0L;
  long double backward = 0.0L;
  for (std::int64_t k = 0; k <= N + 1; ++k) {
    const double lp = log_binomial_pmf(k, N, log_p, log_q);      // P(Q = k)
    const double lq = log_binomial_pmf(k - input_difference, N, log_p, log_q);
    if (std::isfinite(lp)) {
      const double excess = -std::expm1(counter_epsilon + lq - lp);
      if (excess > 0.0) forward += std::exp(lp) * static_cast<long double>(excess);
    }
    if (std::isfinite(lq)) {
      const double excess = -std::expm1(counter_epsilon + lp - lq);
      if (excess > 0.0) backward += std::exp(lq) * static_cast<long double>(excess);
    }
  }
  AuditResult out;
  out.tau = cfg.tau;
  out.batch_size = cfg.batch_size;
  out.epsilon = counter_epsilon;
  out.forward = static_cast<double>(forward);
  out.backward = static_cast<double>(backward);
  return out;
}

}  // namespace sdppe
