#include "sdppe/sdp_pe.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <string>

#include "sdppe/error.hpp"

namespace sdppe {
namespace {

std::int64_t pow2(int b) { return std::int64_t{1} << b; }

// Number of compositions of `total` into `parts` nonnegative integers,
// saturating at `limit + 1`.
std::int64_t compositions(int total, int parts, std::int64_t limit) {
  // C(total + parts - 1, parts - 1)
  double c = 1.0;
  for (int i = 1; i < parts; ++i) {
    c = c * static_cast<double>(total + i) / static_cast<double>(i);
    if (c > static_cast<double>(limit)) return limit + 1;
  }
  return static_cast<std::int64_t>(std::llround(c));
}

// Visits every weight vector with entries k / resolution summing to one.
template <typename Fn>
void for_each_grid_point(int parts, int resolution, Fn&& fn) {
  std::vector<int> counts(static_cast<std::size_t>(parts), 0);
  Eigen::VectorXd w(parts);
  std::function<void(int, int)> rec = [&](int i, int left) {
    if (i == parts - 1) {
      counts[static_cast<std::size_t>(i)] = left;
      for (int j = 0; j < parts; ++j) {
        w(j) = static_cast<double>(counts[static_cast<std::size_t>(j)]) / resolution;
      }
      fn(w);
      return;
    }
    for (int k = 0; k <= left; ++k) {
      counts[static_cast<std::size_t>(i)] = k;
      rec(i + 1, left - k);
    }
  };
  rec(0, resolution);
}

}  // namespace

// ---------------------------------------------------------------------------

std::int64_t BatchSchedule::consumed() const {
  std::int64_t total_used = 0;
  for (const Stage& s : stages) total_used += s.episodes();
  return total_used;
}

BatchSchedule build_schedule(std::int64_t T, int c) {
  if (c < 2) throw DomainError("schedule: c must be at least 2");
  if (T < 2 * static_cast<std::int64_t>(c)) {
    throw DomainError("schedule: T = " + std::to_string(T) + " is below one stage of " +
                      std::to_string(2 * c) + " episodes");
  }
  BatchSchedule out;
  out.total = T;
  out.c = c;
  auto make_stage = [&](std::int64_t L, std::int64_t first) {
    Stage s;
    s.L = L;
    s.crude = L;
    const std::int64_t fine = static_cast<std::int64_t>(c - 1) * L;
    s.fine_ref = fine - fine / 2;
    s.fine_zero = fine / 2;
    s.first_episode = first;
    return s;
  };
  std::int64_t remaining = T;
  std::int64_t next_first = 0;
  for (int b = 1; b < 62 && remaining >= c * pow2(b); ++b) {
    out.stages.push_back(make_stage(pow2(b), next_first));
    next_first += c * pow2(b);
    remaining -= c * pow2(b);
  }
  if (remaining >= c) {
    const std::int64_t L = remaining / c;
    Stage last = make_stage(L, next_first);
    last.fine_ref += remaining - c * L;
    out.stages.push_back(last);
  } else if (remaining > 0) {
    out.stages.back().fine_ref += remaining;
  }
  return out;
}

std::vector<std::int64_t> layer_allocation(std::int64_t L, int horizon) {
  if (horizon < 1 || L < 0) throw DomainError("layer allocation: bad arguments");
  std::vector<std::int64_t> out(static_cast<std::size_t>(horizon), L / horizon);
  for (std::int64_t i = 0; i < L % horizon; ++i) ++out[static_cast<std::size_t>(i)];
  return out;
}

// ---------------------------------------------------------------------------

double ConfidenceParams::iota() const {
  return std::log(2.0 * horizon * actions * static_cast<double>(total_episodes) / delta);
}

double ConfidenceParams::elimination_threshold(std::int64_t L) const {
  if (L < 1) throw DomainError("elimination threshold: L must be positive");
  const double S = states, A = actions, H = horizon;
  const double l = static_cast<double>(L);
  const double i = iota();
  const double c_k = C_K.value_or(C);
  return 2.0 * (C * std::sqrt(S * A * H * H * H * i / l) +
                c_k * S * S * S * A * std::pow(H, 5) * K * i / l);
}

double ConfidenceParams::infrequent_threshold() const {
  return C1 * K * static_cast<double>(horizon) * static_cast<double>(horizon) * iota();
}

// ---------------------------------------------------------------------------

InfrequentTupleSet::InfrequentTupleSet(int horizon, int states, int actions)
    : horizon_(horizon),
      states_(states),
      actions_(actions),
      flags_(static_cast<std::size_t>(horizon) * static_cast<std::size_t>(states) *
                 static_cast<std::size_t>(actions) * static_cast<std::size_t>(states),
             0) {}

std::size_t InfrequentTupleSet::size() const {
  return static_cast<std::size_t>(std::count(flags_.begin(), flags_.end(), std::uint8_t{1}));
}

void estimate_layer(TransitionModel& model, int h, const CountTable& counts,
                    const InfrequentTupleSet& infrequent) {
  const int S = model.num_states();
  const int A = model.num_actions();
  if (!model.has_absorbing()) throw DomainError("estimate_layer: model must be absorbing");
  for (int a = 0; a < A; ++a) {
    Eigen::MatrixXd& k = model.kernel(h, a);
    for (int s = 0; s < S; ++s) {
      k.row(s).setZero();
      const double total = counts.visit(h, s, a);
      double kept = 0.0;
      if (total > 0.0) {
        for (int s2 = 0; s2 < S; ++s2) {
          if (infrequent.contains(h, s, a, s2)) continue;
          const double p = std::max(0.0, counts.transition(h, s, a, s2)) / total;
          k(s, s2) = p;
          kept += p;
        }
      }
      if (kept > 1.0) {
        k.row(s).head(S) /= kept;
        kept = 1.0;
      }
      k(s, S) = 1.0 - kept;
    }
  }
}

TransitionModel absorbing_truth(const TransitionModel& truth, const InfrequentTupleSet& infrequent) {
  const int S = truth.num_states(), A = truth.num_actions(), H = truth.horizon();
  TransitionModel out(S, A, H, true);
  for (int h = 0; h < H; ++h) {
    for (int a = 0; a < A; ++a) {
      for (int s = 0; s < S; ++s) {
        double kept = 0.0;
        out.kernel(h, a).row(s).setZero();
        for (int s2 = 0; s2 < S; ++s2) {
          if (infrequent.contains(h, s, a, s2)) continue;
          out.kernel(h, a)(s, s2) = truth.kernel(h, a)(s, s2);
          kept += truth.kernel(h, a)(s, s2);
        }
        out.kernel(h, a)(s, S) = std::max(0.0, 1.0 - kept);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

PolicySet PolicySet::all(int states, int actions, int horizon, std::uint64_t cap) {
  const std::uint64_t count = policy_count(states, actions, horizon, cap);
  PolicySet out;
  out.ids.resize(count);
  std::iota(out.ids.begin(), out.ids.end(), PolicyId{0});
  out.policies.reserve(count);
  for (PolicyId id : out.ids) {
    out.policies.push_back(DeterministicPolicy::from_id(id, states, actions, horizon));
  }
  return out;
}

PolicySet PolicySet::from_ids(std::vector<PolicyId> ids, int states, int actions, int horizon) {
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  PolicySet out;
  out.ids = std::move(ids);
  for (PolicyId id : out.ids) {
    out.policies.push_back(DeterministicPolicy::from_id(id, states, actions, horizon));
  }
  return out;
}

bool PolicySet::contains(PolicyId id) const {
  return std::binary_search(ids.begin(), ids.end(), id);
}

// ---------------------------------------------------------------------------

Interaction::Interaction(const MdpSpec& env, std::uint64_t seed, std::int64_t budget)
    : env_(&env), seed_(seed), budget_(budget) {
  v_star_ = optimal_values(env.transitions, env.rewards, env.initial).values.initial_value;
  trace_.seed = seed;
  trace_.cumulative.reserve(static_cast<std::size_t>(budget));
  trace_.stage.reserve(static_cast<std::size_t>(budget));
  trace_.active_set_size.reserve(static_cast<std::size_t>(budget));
}

std::vector<Trajectory> Interaction::run(const PolicyMixture& policy, std::int64_t episodes,
                                         int stage, std::int64_t active_size) {
  if (episodes < 0) throw DomainError("interaction: negative episode count");
  if (episodes > remaining()) {
    throw DomainError("interaction: episode budget exhausted (" + std::to_string(remaining()) +
                      " left, " + std::to_string(episodes) + " requested)");
  }
  std::vector<Trajectory> out;
  if (episodes == 0) return out;
  const double value =
      evaluate_policy(policy, env_->transitions, env_->rewards, env_->initial).initial_value;
  const double gap = std::max(0.0, v_star_ - value);
  out.reserve(static_cast<std::size_t>(episodes));
  for (std::int64_t e = 0; e < episodes; ++e) {
    Rng rng = make_stream(seed_, Stream::kEpisode, static_cast<std::uint64_t>(used_));
    Trajectory t = run_episode(*env_, policy, rng);
    t.episode_index = used_;
    t.user_id = used_;
    out.push_back(std::move(t));
    cumulative_ += gap;
    trace_.cumulative.push_back(cumulative_);
    trace_.stage.push_back(stage);
    trace_.active_set_size.push_back(active_size);
    ++used_;
  }
  return out;
}

Rng Interaction::next_protocol_stream() {
  return make_stream(seed_, Stream::kProtocol, protocol_calls_++);
}

// ---------------------------------------------------------------------------

CrudeResult crude_exploration(const PolicySet& active, std::int64_t L, const Privatizer& privatizer,
                              const ConfidenceParams& params, Interaction& interaction,
                              int stage_index) {
  if (active.size() == 0) throw DomainError("crude exploration: empty active set");
  const MdpSpec& env = interaction.env();
  const int S = env.num_states(), A = env.num_actions(), H = env.horizon();
  if (params.states != S || params.actions != A || params.horizon != H) {
    throw DimensionError("crude exploration: confidence parameters do not match the environment");
  }
  CrudeResult out;
  out.infrequent = InfrequentTupleSet(H, S, A);
  out.model.transitions = TransitionModel(S, A, H, true);
  out.model.kind = ModelKind::kCrude;
  out.layer_policy.assign(static_cast<std::size_t>(H), {});
  const double threshold = params.infrequent_threshold();
  const std::vector<std::int64_t> alloc = layer_allocation(L, H);
  const auto active_size = static_cast<std::int64_t>(active.size());

  std::vector<DeterministicPolicy> all_layer_policies;
  for (int h = 0; h < H; ++h) {
    Eigen::MatrixXd best = Eigen::MatrixXd::Constant(S, A, -1.0);
    std::vector<std::size_t> arg(static_cast<std::size_t>(S * A), 0);
    for (std::size_t i = 0; i < active.size(); ++i) {
      const Occupancy occ =
          occupancy_all(active.policies[i], out.model.transitions, env.initial);
      const Eigen::MatrixXd& layer = occ[static_cast<std::size_t>(h)];
      for (int s = 0; s < S; ++s) {
        for (int a = 0; a < A; ++a) {
          if (layer(s, a) > best(s, a)) {
            best(s, a) = layer(s, a);
            arg[static_cast<std::size_t>(s * A + a)] = i;
          }
        }
      }
    }
    std::vector<DeterministicPolicy> layer_policies;
    layer_policies.reserve(arg.size());
    for (std::size_t idx : arg) layer_policies.push_back(active.policies[idx]);
    all_layer_policies.insert(all_layer_policies.end(), layer_policies.begin(),
                              layer_policies.end());
    out.layer_policy[static_cast<std::size_t>(h)] = arg;

    const std::int64_t n = alloc[static_cast<std::size_t>(h)];
    if (n == 0) {
      // No data for this layer: every tuple is infrequent and the kernel stays
      // all-absorbing.
      for (int s = 0; s < S; ++s) {
        for (int a = 0; a < A; ++a) {
          for (int s2 = 0; s2 < S; ++s2) out.infrequent.insert(h, s, a, s2);
        }
      }
      continue;
    }
    const std::vector<Trajectory> batch = interaction.run(
        PolicyMixture::uniform(std::move(layer_policies)), n, stage_index, active_size);
    Rng protocol = interaction.next_protocol_stream();
    const PrivateCounts counts = privatizer.privatize(batch, H, S, A, protocol);
    for (int s = 0; s < S; ++s) {
      for (int a = 0; a < A; ++a) {
        for (int s2 = 0; s2 < S; ++s2) {
          if (counts.counts.transition(h, s, a, s2) <= threshold) {
            out.infrequent.insert(h, s, a, s2);
          }
        }
      }
    }
    estimate_layer(out.model.transitions, h, counts.counts, out.infrequent);
  }
  out.model.infrequent = out.infrequent;
  out.pi_zero = PolicyMixture::uniform(std::move(all_layer_policies));
  return out;
}

// ---------------------------------------------------------------------------

Eigen::VectorXd flat_occupancy(const DeterministicPolicy& policy, const TransitionModel& model,
                               const Eigen::VectorXd& initial) {
  const int S = model.num_states(), A = model.num_actions(), H = model.horizon();
  const Occupancy occ = occupancy_all(policy, model, initial);
  Eigen::VectorXd out(H * S * A);
  for (int h = 0; h < H; ++h) {
    for (int s = 0; s < S; ++s) {
      for (int a = 0; a < A; ++a) out((h * S + s) * A + a) = occ[static_cast<std::size_t>(h)](s, a);
    }
  }
  return out;
}

double worst_case_coverage(const Eigen::MatrixXd& occupancy, const Eigen::VectorXd& weights) {
  if (weights.size() != occupancy.cols()) throw DimensionError("coverage: weight length mismatch");
  const Eigen::VectorXd q = occupancy * weights;
  double worst = 0.0;
  for (Eigen::Index j = 0; j < occupancy.cols(); ++j) {
    double g = 0.0;
    for (Eigen::Index i = 0; i < occupancy.rows(); ++i) {
      const double o = occupancy(i, j);
      if (o <= 0.0) continue;
      if (q(i) <= 0.0) return std::numeric_limits<double>::infinity();
      g += o / q(i);
    }
    worst = std::max(worst, g);
  }
  return worst;
}

CoverageSolution minimise_coverage(const Eigen::MatrixXd& occupancy, const CoverageOptions& options) {
  const Eigen::Index n = occupancy.cols();
  if (n == 0) throw DomainError("coverage: no candidate policies");
  CoverageSolution out;

  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < occupancy.rows(); ++i) {
    if ((occupancy.row(i).array() > 0.0).any()) rows.push_back(i);
  }
  out.support = rows.size();
  if (rows.empty()) {
    out.weights = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
    return out;
  }
  const auto d = static_cast<Eigen::Index>(rows.size());

  // Merge identical columns; `rep[k]` is the first column of group k.
  std::vector<Eigen::Index> rep;
  std::map<std::vector<double>, std::size_t> seen;
  for (Eigen::Index j = 0; j < n; ++j) {
    std::vector<double> key(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) key[r] = occupancy(rows[r], j);
    if (seen.emplace(std::move(key), rep.size()).second) rep.push_back(j);
  }
  const auto m = static_cast<Eigen::Index>(rep.size());
  Eigen::MatrixXd O(d, m);
  for (Eigen::Index k = 0; k < m; ++k) {
    for (Eigen::Index r = 0; r < d; ++r) O(r, k) = occupancy(rows[static_cast<std::size_t>(r)], rep[static_cast<std::size_t>(k)]);
  }

  auto gradient = [&](const Eigen::VectorXd& w, Eigen::VectorXd& g) {
    const Eigen::VectorXd q = O * w;
    g = O.transpose() * q.cwiseInverse();
  };
  auto coverage_of = [&](const Eigen::VectorXd& w) {
    const Eigen::VectorXd q = O * w;
    if ((q.array() <= 0.0).any()) return std::numeric_limits<double>::infinity();
    return (O.transpose() * q.cwiseInverse()).maxCoeff();
  };

  const double target = static_cast<double>(d) * (1.0 + options.tolerance);
  Eigen::VectorXd w = Eigen::VectorXd::Constant(m, 1.0 / static_cast<double>(m));
  Eigen::VectorXd g;
  int it = 0;
  for (; it < options.max_iterations; ++it) {
    gradient(w, g);
    if (g.maxCoeff() <= target) break;
    w = w.cwiseProduct(g) / static_cast<double>(d);
    w /= w.sum();
  }
  out.iterations = it;
  double best = coverage_of(w);

  if (n <= options.grid_fallback_max && m > 1) {
    int resolution = 1;
    while (compositions(resolution + 1, static_cast<int>(m), options.grid_points) <=
           options.grid_points) {
      ++resolution;
    }
    Eigen::VectorXd grid_best_w;
    double grid_best = std::numeric_limits<double>::infinity();
    for_each_grid_point(static_cast<int>(m), resolution, [&](const Eigen::VectorXd& cand) {
      const double c = coverage_of(cand);
      if (c < grid_best) {
        grid_best = c;
        grid_best_w = cand;
      }
    });
    if (grid_best < best) {
      best = grid_best;
      w = grid_best_w;
    }
  }

  out.weights = Eigen::VectorXd::Zero(n);
  for (Eigen::Index k = 0; k < m; ++k) out.weights(rep[static_cast<std::size_t>(k)]) = w(k);
  out.coverage = best;
  return out;
}

FinePolicy fine_exploration_policy(const PolicySet& active, const AbsorbingModel& crude,
                                   const Eigen::VectorXd& initial, const CoverageOptions& options) {
  if (active.size() == 0) throw DomainError("fine exploration policy: empty active set");
  const TransitionModel& model = crude.transitions;
  const int rows = model.horizon() * model.num_states() * model.num_actions();
  Eigen::MatrixXd occ(rows, static_cast<Eigen::Index>(active.size()));
  for (std::size_t j = 0; j < active.size(); ++j) {
    occ.col(static_cast<Eigen::Index>(j)) = flat_occupancy(active.policies[j], model, initial);
  }
  const CoverageSolution sol = minimise_coverage(occ, options);
  if (!std::isfinite(sol.coverage)) {
    throw DomainError("fine exploration policy: no finite-coverage mixture");
  }
  FinePolicy out;
  double total = 0.0;
  for (std::size_t j = 0; j < active.size(); ++j) {
    const double wj = sol.weights(static_cast<Eigen::Index>(j));
    if (wj > 0.0) {
      out.mixture.components.push_back(active.policies[j]);
      out.mixture.weights.push_back(wj);
      total += wj;
    }
  }
  for (double& wj : out.mixture.weights) wj /= total;
  out.coverage = sol.coverage;
  out.support = sol.support;
  return out;
}

FineResult estimate_refined(PrivateCounts counts, const InfrequentTupleSet& infrequent) {
  const CountTable& c = counts.counts;
  const int H = c.horizon(), S = c.num_states(), A = c.num_actions();
  FineResult out;
  out.model.transitions = TransitionModel(S, A, H, true);
  out.model.infrequent = infrequent;
  out.model.kind = ModelKind::kRefined;
  out.reward = RewardFunction(S, A, H);
  for (int h = 0; h < H; ++h) {
    estimate_layer(out.model.transitions, h, c, infrequent);
    for (int s = 0; s < S; ++s) {
      for (int a = 0; a < A; ++a) {
        const double n = c.visit(h, s, a);
        out.reward.at(h)(s, a) = n > 0.0 ? std::clamp(c.reward(h, s, a), 0.0, n) / n : 0.0;
      }
    }
  }
  out.counts = std::move(counts);
  return out;
}

FineResult fine_exploration(const Stage& stage, const InfrequentTupleSet& infrequent,
                            const PolicyMixture& pi_ref, const PolicyMixture& pi_zero,
                            const Privatizer& privatizer, Interaction& interaction,
                            int stage_index, std::int64_t active_size) {
  const MdpSpec& env = interaction.env();
  if (stage.fine_ref + stage.fine_zero > interaction.remaining()) {
    throw DomainError("fine exploration: episode budget exhausted");
  }
  std::vector<Trajectory> batch = interaction.run(pi_ref, stage.fine_ref, stage_index, active_size);
  std::vector<Trajectory> more = interaction.run(pi_zero, stage.fine_zero, stage_index, active_size);
  batch.insert(batch.end(), std::make_move_iterator(more.begin()),
               std::make_move_iterator(more.end()));
  Rng protocol = interaction.next_protocol_stream();
  PrivateCounts counts =
      privatizer.privatize(batch, env.horizon(), env.num_states(), env.num_actions(), protocol);
  return estimate_refined(std::move(counts), infrequent);
}

// ---------------------------------------------------------------------------

std::vector<double> policy_values(const PolicySet& active, const TransitionModel& model,
                                  const RewardFunction& reward, const Eigen::VectorXd& initial) {
  std::vector<double> out;
  out.reserve(active.size());
  for (const DeterministicPolicy& pi : active.policies) {
    out.push_back(evaluate_policy(pi, model, reward, initial).initial_value);
  }
  return out;
}

PolicySet eliminate(const PolicySet& active, std::span<const double> values, double threshold) {
  if (values.size() != active.size()) throw DimensionError("eliminate: one value per policy");
  if (active.size() == 0) throw DomainError("eliminate: empty active set");
  const auto top = static_cast<std::size_t>(
      std::distance(values.begin(), std::max_element(values.begin(), values.end())));
  const double sup = values[top];
  PolicySet out;
  for (std::size_t i = 0; i < active.size(); ++i) {
    if (i == top || sup - values[i] < threshold) {
      out.ids.push_back(active.ids[i]);
      out.policies.push_back(active.policies[i]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

SdpPeResult run_sdp_pe(const MdpSpec& env, std::int64_t T, const Privatizer& privatizer,
                       const SdpPeOptions& options, std::uint64_t seed) {
  env.validate();
  const int S = env.num_states(), A = env.num_actions(), H = env.horizon();
  const BatchSchedule schedule = build_schedule(T, options.c);
  ConfidenceParams params;
  params.states = S;
  params.actions = A;
  params.horizon = H;
  params.total_episodes = T;
  params.delta = options.delta;
  params.K = privatizer.precision();
  params.C = options.C;
  params.C_K = options.C_K;
  params.C1 = options.C1;

  Interaction interaction(env, seed, T);
  PolicySet active = PolicySet::all(S, A, H);
  SdpPeResult result;
  for (std::size_t b = 0; b < schedule.stages.size(); ++b) {
    const Stage& stage = schedule.stages[b];
    const int index = static_cast<int>(b) + 1;
    const auto active_size = static_cast<std::int64_t>(active.size());

    const CrudeResult crude =
        crude_exploration(active, stage.crude, privatizer, params, interaction, index);
    const FinePolicy pi_ref =
        fine_exploration_policy(active, crude.model, env.initial, options.coverage);
    const FineResult fine = fine_exploration(stage, crude.infrequent, pi_ref.mixture, crude.pi_zero,
                                             privatizer, interaction, index, active_size);
    const std::vector<double> values =
        policy_values(active, fine.model.transitions, fine.reward, env.initial);
    const double threshold = params.elimination_threshold(stage.L);
    PolicySet survivors = eliminate(active, values, threshold);

    StageReport report;
    report.index = index;
    report.stage = stage;
    report.active_before = active.size();
    report.active_after = survivors.size();
    report.infrequent = crude.infrequent.size();
    report.threshold = threshold;
    report.coverage = pi_ref.coverage;
    if (options.observer) {
      report.crude = &crude;
      report.fine = &fine;
      report.survivors = &survivors;
      options.observer(report);
      report.crude = nullptr;
      report.fine = nullptr;
      report.survivors = nullptr;
    }
    result.stages.push_back(report);
    active = std::move(survivors);
  }
  if (interaction.used() != T) {
    throw Error("schedule consumed " + std::to_string(interaction.used()) + " of " +
                std::to_string(T) + " episodes");
  }
  result.trace = interaction.take_trace();
  result.final_active = std::move(active);
  return result;
}

}  // namespace sdppe
