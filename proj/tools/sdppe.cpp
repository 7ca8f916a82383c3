// Command-line front end: run experiments, audit the privatizer, validate
// configs and list presets.
//
// Exit codes: 0 success, 1 audit failure, 2 config error, 3 runtime error.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "sdppe/error.hpp"
#include "sdppe/experiment.hpp"
#include "sdppe/privatizer.hpp"

namespace {

constexpr int kAuditFailed = 1;
constexpr int kConfigError = 2;
constexpr int kRuntimeError = 3;

// A path that exists wins over a preset of the same name.
nlohmann::json load_config_json(const std::string& arg, std::filesystem::path& base_dir) {
  if (std::filesystem::exists(arg)) {
    std::ifstream in(arg, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    base_dir = std::filesystem::path(arg).parent_path();
    if (base_dir.empty()) base_dir = ".";
    try {
      return nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::parse_error& e) {
      throw sdppe::ConfigError(arg, std::string("invalid JSON: ") + e.what());
    }
  }
  if (const sdppe::Preset* p = sdppe::find_preset(arg)) {
    base_dir = ".";
    return nlohmann::json::parse(p->json);
  }
  throw sdppe::ConfigError(arg, "no such file or preset");
}

int cmd_run(const std::string& config_arg, const std::string& out, std::optional<std::int64_t> seed,
            std::optional<std::int64_t> reps, std::optional<std::int64_t> threads, bool quiet) {
  std::filesystem::path base_dir;
  nlohmann::json j = load_config_json(config_arg, base_dir);
  if (seed && j.is_object()) j["seed"] = *seed;
  if (reps && j.is_object()) j["replications"] = *reps;
  if (threads && j.is_object()) j["threads"] = *threads;
  const sdppe::ExperimentConfig config = sdppe::parse_experiment(j, base_dir);
  const std::filesystem::path dir =
      out.empty() ? std::filesystem::path(config.output) : std::filesystem::path(out);

  const sdppe::ExperimentResult result = sdppe::run_experiment(config);
  sdppe::emit(result, config, dir);
  if (!quiet) {
    std::printf("config_sha256 %s\n", result.fingerprint.c_str());
    std::printf("%-18s %14s %12s\n", "run", "final_mean", "final_sd");
    for (const sdppe::RunResult& r : result.runs) {
      std::printf("%-18s %14.3f %12.3f\n", r.spec.label.c_str(), r.summary.mean.back(),
                  r.summary.sd.back());
    }
    std::printf("wrote %s\n", dir.string().c_str());
  }
  return 0;
}

int cmd_audit(const std::vector<double>& epsilons, const std::vector<double>& deltas,
              const std::vector<std::int64_t>& sizes) {
  bool all = true;
  std::printf("epsilon_prime,delta_prime,tau,n,forward,backward,divergence,verdict\n");
  for (double eps : epsilons) {
    for (double delta : deltas) {
      if (!(eps > 0.0 && eps < 1.0)) throw sdppe::ConfigError("epsilon", "must lie in (0, 1)");
      if (!(delta > 0.0 && delta < 1.0)) throw sdppe::ConfigError("delta", "must lie in (0, 1)");
      const std::int64_t tau = sdppe::compute_tau(eps, delta);
      for (std::int64_t n : sizes) {
        if (n < 1) throw sdppe::ConfigError("n", "batch sizes must be positive");
        const sdppe::AuditResult r = sdppe::audit_hockey_stick(sdppe::NoiseConfig::make(tau, n), eps);
        const bool pass = r.passes(delta);
        all = all && pass;
        std::printf("%.17g,%.17g,%lld,%lld,%.6e,%.6e,%.6e,%s\n", eps, delta,
                    static_cast<long long>(tau), static_cast<long long>(n), r.forward, r.backward,
                    r.divergence(), pass ? "PASS" : "FAIL");
      }
    }
  }
  return all ? 0 : kAuditFailed;
}

int cmd_validate(const std::string& config_arg) {
  std::filesystem::path base_dir;
  const nlohmann::json j = load_config_json(config_arg, base_dir);
  const sdppe::ExperimentConfig config = sdppe::parse_experiment(j, base_dir);
  std::printf("ok %s\n", config.fingerprint().c_str());
  std::printf("environment %s (S=%d, A=%d, H=%d), T=%lld, replications=%d\n",
              config.environment_name.c_str(), config.environment.num_states(),
              config.environment.num_actions(), config.environment.horizon(),
              static_cast<long long>(config.episodes), config.replications);
  for (const sdppe::RunSpec& r : sdppe::expand_runs(config)) std::printf("run %s\n", r.label.c_str());
  return 0;
}

int cmd_presets(const std::string& show) {
  if (!show.empty()) {
    const sdppe::Preset* p = sdppe::find_preset(show);
    if (!p) throw sdppe::ConfigError(show, "no such preset");
    std::fputs(p->json.c_str(), stdout);
    return 0;
  }
  std::printf("experiments:\n");
  for (const sdppe::Preset& p : sdppe::builtin_presets()) {
    std::printf("  %-16s %s\n", p.name.c_str(), p.description.c_str());
  }
  std::printf("environments:\n");
  std::printf("  %-16s %s\n", "riverswim-small", "RiverSwim chain, S = 3, A = 2, H = 3");
  std::printf("  %-16s %s\n", "riverswim", "RiverSwim chain, S = 4, A = 2, H = 6");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shuffle-private policy elimination for tabular episodic MDPs"};
  app.require_subcommand(1);

  std::string config_arg, out, show;
  std::optional<std::int64_t> seed, reps, threads;
  bool quiet = false;
  CLI::App* run = app.add_subcommand("run", "Run an experiment config or preset");
  run->add_option("config", config_arg, "Config file or preset name")->required();
  run->add_option("--out", out, "Output directory (default: the config's output)");
  run->add_option("--seed", seed, "Override the base seed");
  run->add_option("--reps", reps, "Override the replication count");
  run->add_option("--threads", threads, "Worker threads (0: all cores)");
  run->add_flag("--quiet", quiet, "Only write files");

  std::vector<double> epsilons{0.25, 0.5}, deltas{1e-2, 1e-4, 1e-6};
  std::vector<std::int64_t> sizes{2, 8, 32};
  CLI::App* audit = app.add_subcommand("audit", "Exact hockey-stick audit of the binary mechanism");
  audit->add_option("--epsilon", epsilons, "Per-counter epsilon values")->delimiter(',');
  audit->add_option("--delta", deltas, "Per-counter delta values")->delimiter(',');
  audit->add_option("--n", sizes, "Batch sizes")->delimiter(',');

  std::string validate_arg;
  CLI::App* validate = app.add_subcommand("validate", "Check a config without running it");
  validate->add_option("config", validate_arg, "Config file or preset name")->required();

  CLI::App* presets = app.add_subcommand("presets", "List built-in presets");
  presets->add_option("--show", show, "Print one preset's JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  try {
    if (*run) return cmd_run(config_arg, out, seed, reps, threads, quiet);
    if (*audit) return cmd_audit(epsilons, deltas, sizes);
    if (*validate) return cmd_validate(validate_arg);
    if (*presets) return cmd_presets(show);
  } catch (const sdppe::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntimeError;
  }
  return 0;
}
