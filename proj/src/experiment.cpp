#include "sdppe/experiment.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "sdppe/environment.hpp"
#include "sdppe/error.hpp"
#include "sdppe/privatizer.hpp"

namespace sdppe {

using nlohmann::json;

namespace {

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

std::string index_path(const std::string& path, std::size_t i) {
  return path + "[" + std::to_string(i) + "]";
}

void reject_unknown_keys(const json& j, const std::string& path,
                         std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ConfigError(join(path, key), "unknown key");
    }
  }
}

const json& require(const json& j, const std::string& path, const char* key) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  const auto it = j.find(key);
  if (it == j.end()) throw ConfigError(join(path, key), "missing");
  return *it;
}

double as_number(const json& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ConfigError(path, "must be finite");
  return v;
}

std::int64_t as_integer(const json& j, const std::string& path) {
  if (!j.is_number_integer()) throw ConfigError(path, "expected an integer");
  return j.get<std::int64_t>();
}

std::string as_string(const json& j, const std::string& path) {
  if (!j.is_string()) throw ConfigError(path, "expected a string");
  return j.get<std::string>();
}

double number_or(const json& j, const std::string& path, const char* key, double fallback) {
  const auto it = j.find(key);
  return it == j.end() ? fallback : as_number(*it, join(path, key));
}

const json& array_of(const json& j, const std::string& path, std::size_t size) {
  if (!j.is_array()) throw ConfigError(path, "expected an array");
  if (j.size() != size) {
    throw ConfigError(path, "expected " + std::to_string(size) + " entries, found " +
                                std::to_string(j.size()));
  }
  return j;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string epsilon_label(double eps) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", eps);
  return buf;
}

RiverSwimParams riverswim_from_json(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  reject_unknown_keys(j, path,
                      {"n_states", "horizon", "p_right_success", "p_right_stay", "p_right_back",
                       "r_left_mean", "r_right_mean"});
  RiverSwimParams p;
  if (j.contains("n_states")) p.n_states = static_cast<int>(as_integer(j["n_states"], join(path, "n_states")));
  if (j.contains("horizon")) p.horizon = static_cast<int>(as_integer(j["horizon"], join(path, "horizon")));
  p.p_right_success = number_or(j, path, "p_right_success", p.p_right_success);
  p.p_right_stay = number_or(j, path, "p_right_stay", p.p_right_stay);
  p.p_right_back = number_or(j, path, "p_right_back", p.p_right_back);
  p.r_left_mean = number_or(j, path, "r_left_mean", p.r_left_mean);
  p.r_right_mean = number_or(j, path, "r_right_mean", p.r_right_mean);
  try {
    p.validate();
  } catch (const Error& e) {
    throw ConfigError(path, e.what());
  }
  return p;
}

std::string read_text(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError(file.string(), "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse_json_text(const std::string& text, const std::string& where) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(where, std::string("invalid JSON: ") + e.what());
  }
}

void load_environment(ExperimentConfig& config, const json& env, const std::string& path,
                      const std::filesystem::path& base_dir) {
  if (!env.is_object()) throw ConfigError(path, "expected an object");
  reject_unknown_keys(env, path, {"preset", "riverswim", "file", "mdp"});
  if (env.size() != 1) {
    throw ConfigError(path, "give exactly one of preset, riverswim, file or mdp");
  }
  if (env.contains("preset")) {
    config.environment_name = as_string(env["preset"], join(path, "preset"));
    try {
      config.environment = environment_preset(config.environment_name);
    } catch (const ConfigError& e) {
      throw ConfigError(join(path, "preset"), e.what());
    }
  } else if (env.contains("riverswim")) {
    config.environment_name = "riverswim";
    config.environment = riverswim(riverswim_from_json(env["riverswim"], join(path, "riverswim")));
  } else if (env.contains("file")) {
    const std::filesystem::path file =
        base_dir / std::filesystem::path(as_string(env["file"], join(path, "file")));
    config.environment_name = file.filename().string();
    config.environment = mdp_from_json(parse_json_text(read_text(file), file.string()));
  } else {
    config.environment_name = "tabular";
    config.environment = mdp_from_json(env["mdp"], join(path, "mdp"));
  }
}

AlgorithmConfig algorithm_from_json(const json& j, const std::string& path) {
  AlgorithmConfig a;
  if (j.is_string()) {
    try {
      a.algorithm = parse_algorithm(j.get<std::string>());
    } catch (const ConfigError& e) {
      throw ConfigError(path, e.what());
    }
    return a;
  }
  if (!j.is_object()) throw ConfigError(path, "expected an algorithm name or object");
  const std::string name = as_string(require(j, path, "name"), join(path, "name"));
  try {
    a.algorithm = parse_algorithm(name);
  } catch (const ConfigError& e) {
    throw ConfigError(join(path, "name"), e.what());
  }
  const bool elimination = a.algorithm == Algorithm::kSdpPe || a.algorithm == Algorithm::kPe;
  if (elimination) {
    reject_unknown_keys(j, path, {"name", "C", "C_K", "C1", "c", "K_scale"});
    a.C = number_or(j, path, "C", a.C);
    if (j.contains("C_K")) a.C_K = as_number(j["C_K"], join(path, "C_K"));
    a.C1 = number_or(j, path, "C1", a.C1);
    if (j.contains("c")) a.c = static_cast<int>(as_integer(j["c"], join(path, "c")));
    a.K_scale = number_or(j, path, "K_scale", a.K_scale);
    if (!(a.K_scale > 0.0)) throw ConfigError(join(path, "K_scale"), "must be positive");
    if (!(a.C > 0.0)) throw ConfigError(join(path, "C"), "must be positive");
    if (a.C_K && !(*a.C_K >= 0.0)) throw ConfigError(join(path, "C_K"), "must be nonnegative");
    if (!(a.C1 >= 0.0)) throw ConfigError(join(path, "C1"), "must be nonnegative");
    if (a.c < 2) throw ConfigError(join(path, "c"), "must be at least 2");
  } else {
    reject_unknown_keys(j, path, {"name", "bonus_scale"});
    a.bonus_scale = number_or(j, path, "bonus_scale", a.bonus_scale);
    if (!(a.bonus_scale >= 0.0)) throw ConfigError(join(path, "bonus_scale"), "must be nonnegative");
  }
  return a;
}

}  // namespace

// ---------------------------------------------------------------------------

MdpSpec mdp_from_json(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  reject_unknown_keys(j, path, {"S", "A", "H", "transitions", "rewards", "initial"});
  const std::int64_t S = as_integer(require(j, path, "S"), join(path, "S"));
  const std::int64_t A = as_integer(require(j, path, "A"), join(path, "A"));
  const std::int64_t H = as_integer(require(j, path, "H"), join(path, "H"));
  if (S < 1) throw ConfigError(join(path, "S"), "must be at least 1");
  if (A < 1) throw ConfigError(join(path, "A"), "must be at least 1");
  if (H < 1) throw ConfigError(join(path, "H"), "must be at least 1");
  const auto s = static_cast<std::size_t>(S), a = static_cast<std::size_t>(A),
             hz = static_cast<std::size_t>(H);
  const int Si = static_cast<int>(S), Ai = static_cast<int>(A), Hi = static_cast<int>(H);
  MdpSpec spec{TransitionModel(Si, Ai, Hi), RewardFunction(Si, Ai, Hi), Eigen::VectorXd(Si)};

  const std::string tp = join(path, "transitions");
  const json& tr = array_of(require(j, path, "transitions"), tp, hz);
  for (std::size_t h = 0; h < hz; ++h) {
    const std::string ph = index_path(tp, h);
    array_of(tr[h], ph, s);
    for (std::size_t x = 0; x < s; ++x) {
      const std::string px = index_path(ph, x);
      array_of(tr[h][x], px, a);
      for (std::size_t u = 0; u < a; ++u) {
        const std::string pu = index_path(px, u);
        const json& row = array_of(tr[h][x][u], pu, s);
        double total = 0.0;
        for (std::size_t y = 0; y < s; ++y) {
          const double p = as_number(row[y], index_path(pu, y));
          if (p < 0.0) throw ConfigError(index_path(pu, y), "negative probability");
          spec.transitions.kernel(static_cast<int>(h), static_cast<int>(u))(
              static_cast<int>(x), static_cast<int>(y)) = p;
          total += p;
        }
        if (std::abs(total - 1.0) > 1e-9) {
          throw ConfigError(pu, "row sums to " + format_double(total));
        }
      }
    }
  }

  const std::string rp = join(path, "rewards");
  const json& rw = array_of(require(j, path, "rewards"), rp, hz);
  for (std::size_t h = 0; h < hz; ++h) {
    const std::string ph = index_path(rp, h);
    array_of(rw[h], ph, s);
    for (std::size_t x = 0; x < s; ++x) {
      const std::string px = index_path(ph, x);
      const json& row = array_of(rw[h][x], px, a);
      for (std::size_t u = 0; u < a; ++u) {
        const double r = as_number(row[u], index_path(px, u));
        if (r < 0.0 || r > 1.0) throw ConfigError(index_path(px, u), "reward mean outside [0, 1]");
        spec.rewards.at(static_cast<int>(h))(static_cast<int>(x), static_cast<int>(u)) = r;
      }
    }
  }

  const std::string ip = join(path, "initial");
  const json& init = array_of(require(j, path, "initial"), ip, s);
  for (std::size_t x = 0; x < s; ++x) {
    spec.initial(static_cast<int>(x)) = as_number(init[x], index_path(ip, x));
  }
  try {
    spec.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(path, e.what());
  }
  return spec;
}

json mdp_to_json(const MdpSpec& spec) {
  const int S = spec.num_states(), A = spec.num_actions(), H = spec.horizon();
  json tr = json::array(), rw = json::array(), init = json::array();
  for (int h = 0; h < H; ++h) {
    json th = json::array(), rh = json::array();
    for (int s = 0; s < S; ++s) {
      json ts = json::array(), rs = json::array();
      for (int a = 0; a < A; ++a) {
        json row = json::array();
        for (int s2 = 0; s2 < S; ++s2) row.push_back(spec.transitions.prob(h, s, a, s2));
        ts.push_back(std::move(row));
        rs.push_back(spec.rewards(h, s, a));
      }
      th.push_back(std::move(ts));
      rh.push_back(std::move(rs));
    }
    tr.push_back(std::move(th));
    rw.push_back(std::move(rh));
  }
  for (int s = 0; s < S; ++s) init.push_back(spec.initial(s));
  return json{{"S", S}, {"A", A}, {"H", H}, {"transitions", tr}, {"rewards", rw}, {"initial", init}};
}

// ---------------------------------------------------------------------------

const std::vector<Preset>& builtin_presets() {
  static const std::vector<Preset> presets = [] {
    const std::pair<const char*, const char*> sources[] = {
#include "sdppe/presets.inc"
    };
    std::vector<Preset> out;
    for (const auto& [name, text] : sources) {
      const json j = json::parse(text);
      out.push_back(Preset{name, j.value("description", std::string()), text});
    }
    return out;
  }();
  return presets;
}

const Preset* find_preset(const std::string& name) {
  for (const Preset& p : builtin_presets()) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

MdpSpec environment_preset(const std::string& name) {
  if (name == "riverswim-small") return riverswim(riverswim_small_params());
  if (name == "riverswim") return riverswim(RiverSwimParams{});
  throw ConfigError("", "unknown environment preset '" + name +
                            "' (expected riverswim-small or riverswim)");
}

std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256: digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * length);
  for (unsigned int i = 0; i < length; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 15]);
  }
  return out;
}

std::string ExperimentConfig::fingerprint() const { return sha256_hex(source.dump()); }

ExperimentConfig parse_experiment(const json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw ConfigError("", "experiment config must be a JSON object");
  reject_unknown_keys(j, "",
                      {"description", "environment", "algorithm", "algorithms", "T",
                       "replications", "seed", "privacy", "output", "threads"});
  ExperimentConfig config;
  config.source = j;
  if (j.contains("description")) as_string(j["description"], "description");

  load_environment(config, require(j, "", "environment"), "environment", base_dir);

  if (j.contains("algorithm") == j.contains("algorithms")) {
    throw ConfigError("algorithms", "give exactly one of algorithm or algorithms");
  }
  if (j.contains("algorithm")) {
    config.algorithms.push_back(algorithm_from_json(j["algorithm"], "algorithm"));
  } else {
    const json& list = j["algorithms"];
    if (!list.is_array() || list.empty()) {
      throw ConfigError("algorithms", "expected a nonempty array");
    }
    for (std::size_t i = 0; i < list.size(); ++i) {
      config.algorithms.push_back(algorithm_from_json(list[i], index_path("algorithms", i)));
    }
  }

  config.episodes = as_integer(require(j, "", "T"), "T");
  if (j.contains("replications")) {
    config.replications = static_cast<int>(as_integer(j["replications"], "replications"));
  }
  if (j.contains("seed")) {
    const std::int64_t seed = as_integer(j["seed"], "seed");
    if (seed < 0) throw ConfigError("seed", "must be nonnegative");
    config.seed = static_cast<std::uint64_t>(seed);
  }
  if (j.contains("output")) config.output = as_string(j["output"], "output");
  if (j.contains("threads")) config.threads = static_cast<int>(as_integer(j["threads"], "threads"));
  if (config.replications < 1) throw ConfigError("replications", "must be at least 1");
  if (config.threads < 0) throw ConfigError("threads", "must be nonnegative");

  if (j.contains("privacy")) {
    const json& p = j["privacy"];
    if (!p.is_object()) throw ConfigError("privacy", "expected an object");
    reject_unknown_keys(p, "privacy", {"epsilon", "delta", "tau", "K"});
    if (p.contains("epsilon")) {
      config.privacy.epsilons.clear();
      const json& e = p["epsilon"];
      if (e.is_array()) {
        if (e.empty()) throw ConfigError("privacy.epsilon", "expected at least one value");
        for (std::size_t i = 0; i < e.size(); ++i) {
          config.privacy.epsilons.push_back(as_number(e[i], index_path("privacy.epsilon", i)));
        }
      } else {
        config.privacy.epsilons.push_back(as_number(e, "privacy.epsilon"));
      }
    }
    config.privacy.delta = number_or(p, "privacy", "delta", config.privacy.delta);
    if (p.contains("tau")) config.privacy.tau = as_integer(p["tau"], "privacy.tau");
    if (p.contains("K")) config.privacy.K = as_number(p["K"], "privacy.K");
  }
  const int S = config.environment.num_states(), A = config.environment.num_actions(),
            H = config.environment.horizon();
  if (!(config.privacy.delta > 0.0 && config.privacy.delta < 1.0)) {
    throw ConfigError("privacy.delta", "must lie in (0, 1)");
  }
  for (std::size_t i = 0; i < config.privacy.epsilons.size(); ++i) {
    const double eps = config.privacy.epsilons[i];
    const std::string where = config.privacy.epsilons.size() > 1
                                  ? index_path("privacy.epsilon", i)
                                  : std::string("privacy.epsilon");
    if (!(eps > 0.0)) throw ConfigError(where, "must be positive");
    try {
      PrivacyBudget{eps, config.privacy.delta, H, S, A}.validate();
    } catch (const Error& e) {
      throw ConfigError(where, e.what());
    }
  }
  if (config.privacy.tau && *config.privacy.tau < 1) {
    throw ConfigError("privacy.tau", "must be positive");
  }
  if (config.privacy.K && !(*config.privacy.K >= 0.0)) {
    throw ConfigError("privacy.K", "must be nonnegative");
  }

  for (const AlgorithmConfig& a : config.algorithms) {
    if (a.algorithm == Algorithm::kSdpPe || a.algorithm == Algorithm::kPe) {
      if (config.episodes < 2 * a.c) {
        throw ConfigError("T", "must be at least 2c = " + std::to_string(2 * a.c) +
                                   " for policy elimination");
      }
      try {
        policy_count(S, A, H);
      } catch (const InstanceTooLarge& e) {
        throw ConfigError("environment", e.what());
      }
    }
  }
  if (config.episodes < 1) throw ConfigError("T", "must be at least 1");
  std::set<std::string> labels;
  for (const AlgorithmConfig& a : config.algorithms) {
    if (!labels.insert(std::string(algorithm_name(a.algorithm))).second) {
      throw ConfigError("algorithms",
                        "algorithm '" + std::string(algorithm_name(a.algorithm)) + "' listed twice");
    }
  }
  return config;
}

ExperimentConfig load_experiment(const std::filesystem::path& file) {
  const json j = parse_json_text(read_text(file), file.string());
  return parse_experiment(j, file.parent_path().empty() ? "." : file.parent_path());
}

// ---------------------------------------------------------------------------

std::vector<RunSpec> expand_runs(const ExperimentConfig& config) {
  std::vector<RunSpec> runs;
  for (const AlgorithmConfig& a : config.algorithms) {
    const std::string name(algorithm_name(a.algorithm));
    if (is_private(a.algorithm)) {
      for (double eps : config.privacy.epsilons) {
        runs.push_back(RunSpec{a, eps, name + "_eps" + epsilon_label(eps)});
      }
    } else {
      runs.push_back(RunSpec{a, std::nullopt, name});
    }
  }
  return runs;
}

RegretTrace run_replication(const ExperimentConfig& config, const RunSpec& run,
                            std::uint64_t seed) {
  const MdpSpec& env = config.environment;
  const AlgorithmConfig& a = run.algorithm;
  RegretTrace trace;
  if (a.algorithm == Algorithm::kSdpPe || a.algorithm == Algorithm::kPe) {
    SdpPeOptions options;
    options.C = a.C;
    options.C_K = a.C_K;
    options.C1 = a.C1;
    options.c = a.c;
    options.delta = config.privacy.delta;
    if (a.algorithm == Algorithm::kPe) {
      trace = run_pe_nonprivate(env, config.episodes, seed, options).trace;
    } else {
      PrivatizerConfig pc;
      pc.budget = PrivacyBudget{run.epsilon.value(), config.privacy.delta, env.horizon(),
                                env.num_states(), env.num_actions()};
      pc.total_episodes = config.episodes;
      pc.tau = config.privacy.tau;
      pc.K = config.privacy.K;
      pc.K_scale = a.K_scale;
      const ShufflePrivatizer privatizer(pc);
      trace = run_sdp_pe(env, config.episodes, privatizer, options, seed).trace;
    }
  } else {
    UcbviOptions options;
    options.bonus_scale = a.bonus_scale;
    options.delta = config.privacy.delta;
    if (a.algorithm == Algorithm::kUcbviLdp) options.noise = CountNoise::kLocal;
    if (a.algorithm == Algorithm::kUcbviJdp) options.noise = CountNoise::kCentral;
    if (run.epsilon) options.epsilon = *run.epsilon;
    trace = run_ucbvi(env, config.episodes, options, seed).trace;
  }
  trace.seed = seed;
  trace.fingerprint = config.fingerprint();
  return trace;
}

Aggregate aggregate(const std::vector<RegretTrace>& traces) {
  if (traces.empty()) throw DomainError("aggregate: no traces");
  const std::size_t n = traces.front().size();
  if (n == 0) throw DomainError("aggregate: empty trace");
  for (const RegretTrace& t : traces) {
    if (t.size() != n) throw DomainError("aggregate: traces differ in length");
  }
  const double reps = static_cast<double>(traces.size());
  Aggregate out;
  out.mean.assign(n, 0.0);
  out.sd.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (const RegretTrace& t : traces) sum += t.cumulative[i];
    const double mean = sum / reps;
    double sq = 0.0;
    for (const RegretTrace& t : traces) sq += (t.cumulative[i] - mean) * (t.cumulative[i] - mean);
    out.mean[i] = mean;
    out.sd[i] = traces.size() > 1 ? std::sqrt(sq / (reps - 1.0)) : 0.0;
  }
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  ExperimentResult result;
  result.fingerprint = config.fingerprint();
  for (RunSpec& spec : expand_runs(config)) {
    RunResult r;
    r.spec = std::move(spec);
    r.traces.resize(static_cast<std::size_t>(config.replications));
    result.runs.push_back(std::move(r));
  }
  const std::size_t reps = static_cast<std::size_t>(config.replications);
  const std::size_t jobs = result.runs.size() * reps;
  unsigned workers = config.threads > 0 ? static_cast<unsigned>(config.threads)
                                        : std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, jobs));

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (;;) {
      const std::size_t job = next.fetch_add(1);
      if (job >= jobs) return;
      RunResult& run = result.runs[job / reps];
      const std::size_t rep = job % reps;
      try {
        run.traces[rep] = run_replication(config, run.spec, config.seed + rep);
      } catch (...) {
        const std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(jobs);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < workers; ++t) pool.emplace_back(work);
  work();
  for (std::thread& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  for (RunResult& run : result.runs) run.summary = aggregate(run.traces);
  return result;
}

// ---------------------------------------------------------------------------

std::string trace_csv(const RegretTrace& trace, const std::string& label) {
  if (trace.size() == 0) throw DomainError("trace CSV: empty trace for " + label);
  std::string out = "# config_sha256=" + trace.fingerprint + " seed=" + std::to_string(trace.seed) +
                    " run=" + label + "\n";
  out += "episode,cumulative_regret,stage,active_set_size\n";
  for (std::size_t i = 0; i < trace.size(); ++i) {
    out += std::to_string(i + 1);
    out += ',';
    out += format_double(trace.cumulative[i]);
    out += ',';
    out += std::to_string(trace.stage[i]);
    out += ',';
    out += std::to_string(trace.active_set_size[i]);
    out += '\n';
  }
  return out;
}

std::string aggregate_csv(const RunResult& run, const std::string& fingerprint) {
  const Aggregate& a = run.summary;
  if (a.mean.empty()) throw DomainError("aggregate CSV: empty aggregate for " + run.spec.label);
  std::string out = "# config_sha256=" + fingerprint + " run=" + run.spec.label +
                    " replications=" + std::to_string(run.traces.size()) + "\n";
  out += "episode,mean_cumulative_regret,sd_cumulative_regret\n";
  for (std::size_t i = 0; i < a.mean.size(); ++i) {
    out += std::to_string(i + 1) + "," + format_double(a.mean[i]) + "," + format_double(a.sd[i]) +
           "\n";
  }
  return out;
}

json aggregate_json(const ExperimentResult& result, const ExperimentConfig& config) {
  json runs = json::array();
  for (const RunResult& run : result.runs) {
    if (run.summary.mean.empty()) {
      throw DomainError("aggregate JSON: empty aggregate for " + run.spec.label);
    }
    json seeds = json::array(), finals = json::array();
    for (const RegretTrace& t : run.traces) {
      seeds.push_back(t.seed);
      finals.push_back(t.final_regret());
    }
    runs.push_back(json{
        {"label", run.spec.label},
        {"algorithm", std::string(algorithm_name(run.spec.algorithm.algorithm))},
        {"epsilon", run.spec.epsilon ? json(*run.spec.epsilon) : json(nullptr)},
        {"seeds", seeds},
        {"final_regret", finals},
        {"final_mean", run.summary.mean.back()},
        {"final_sd", run.summary.sd.back()},
        {"mean", run.summary.mean},
        {"sd", run.summary.sd},
    });
  }
  return json{{"schema_version", 1},
              {"config_sha256", result.fingerprint},
              {"environment", config.environment_name},
              {"episodes", config.episodes},
              {"replications", config.replications},
              {"base_seed", config.seed},
              {"runs", runs}};
}

void write_file(const std::filesystem::path& file, const std::string& text) {
  std::error_code ec;
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path(), ec);
  if (ec) throw Error("cannot create directory " + file.parent_path().string() + ": " + ec.message());
  const std::filesystem::path tmp = file.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + file.string());
    out << text;
    out.flush();
    if (!out) {
      out.close();
      std::filesystem::remove(tmp, ec);
      throw Error("write failed for " + file.string());
    }
  }
  std::filesystem::rename(tmp, file, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error("cannot write " + file.string());
  }
}

void emit(const ExperimentResult& result, const ExperimentConfig& config,
          const std::filesystem::path& dir) {
  if (result.runs.empty()) throw DomainError("emit: no runs");
  // Render everything first so a bad trace leaves nothing behind.
  std::vector<std::pair<std::filesystem::path, std::string>> files;
  files.emplace_back(dir / "config.json", config.source.dump(2) + "\n");
  for (const RunResult& run : result.runs) {
    if (run.traces.empty()) throw DomainError("emit: run " + run.spec.label + " has no traces");
    for (std::size_t i = 0; i < run.traces.size(); ++i) {
      files.emplace_back(dir / "traces" / run.spec.label / ("rep_" + std::to_string(i) + ".csv"),
                         trace_csv(run.traces[i], run.spec.label));
    }
    files.emplace_back(dir / "aggregate" / (run.spec.label + ".csv"),
                       aggregate_csv(run, result.fingerprint));
  }
  files.emplace_back(dir / "aggregate.json", aggregate_json(result, config).dump(1) + "\n");
  for (const auto& [path, text] : files) write_file(path, text);
}

// ---------------------------------------------------------------------------

std::size_t CsvTable::column(const std::string& name) const {
  const auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw DomainError("csv: no column '" + name + "'");
  return static_cast<std::size_t>(it - columns.begin());
}

CsvTable parse_csv(const std::string& text) {
  CsvTable table;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto split = [](const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    for (char ch : s) {
      if (ch == sep) {
        parts.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(ch);
      }
    }
    parts.push_back(cur);
    return parts;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      for (const std::string& field : split(line.substr(1), ' ')) {
        const auto eq = field.find('=');
        if (eq != std::string::npos) table.metadata.emplace_back(field.substr(0, eq), field.substr(eq + 1));
      }
      continue;
    }
    if (table.columns.empty()) {
      table.columns = split(line, ',');
      continue;
    }
    const std::vector<std::string> cells = split(line, ',');
    if (cells.size() != table.columns.size()) {
      throw DomainError("csv line " + std::to_string(line_no) + ": expected " +
                        std::to_string(table.columns.size()) + " fields");
    }
    std::vector<double> row;
    row.reserve(cells.size());
    for (const std::string& c : cells) {
      char* end = nullptr;
      const double v = std::strtod(c.c_str(), &end);
      if (c.empty() || end != c.c_str() + c.size()) {
        throw DomainError("csv line " + std::to_string(line_no) + ": bad number '" + c + "'");
      }
      row.push_back(v);
    }
    table.rows.push_back(std::move(row));
  }
  if (table.columns.empty()) throw DomainError("csv: no header");
  return table;
}

CsvTable read_csv(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error("cannot open " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str());
}

}  // namespace sdppe
