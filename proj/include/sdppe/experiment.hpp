#pragma once

// Experiment configuration, seeded replications, aggregation and output.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sdppe/baselines.hpp"
#include "sdppe/mdp.hpp"
#include "sdppe/sdp_pe.hpp"

namespace sdppe {

// ---------------------------------------------------------------------------
// MDP files

/// Tabular MDP from JSON with keys S, A, H, transitions (H x S x A x S),
/// rewards (H x S x A) and initial (S). Errors are ConfigError with the
/// offending path, e.g. "transitions[1][0][1]".
MdpSpec mdp_from_json(const nlohmann::json& j, const std::string& path = "");
nlohmann::json mdp_to_json(const MdpSpec& spec);

// ---------------------------------------------------------------------------
// Configuration

struct AlgorithmConfig {
  Algorithm algorithm = Algorithm::kSdpPe;
  // policy elimination
  double C = 1.0;
  std::optional<double> C_K;
  double C1 = 6.0;
  int c = 3;
  double K_scale = 1.0;  // sdp-pe only: multiplies the privatizer's K
  // UCB-VI
  double bonus_scale = 1.0;
};

struct PrivacyConfig {
  std::vector<double> epsilons{1.0};
  double delta = 0.05;
  std::optional<std::int64_t> tau;
  std::optional<double> K;
};

struct ExperimentConfig {
  nlohmann::json source;  // effective config; the fingerprint hashes its dump
  std::string environment_name;
  MdpSpec environment;
  std::vector<AlgorithmConfig> algorithms;
  std::int64_t episodes = 0;
  int replications = 1;
  std::uint64_t seed = 0;
  PrivacyConfig privacy;
  std::string output = "results";
  int threads = 0;  // 0: hardware concurrency

  std::string fingerprint() const;
};

/// Parses and validates. `base_dir` resolves relative MDP file paths.
ExperimentConfig parse_experiment(const nlohmann::json& j,
                                  const std::filesystem::path& base_dir = ".");
ExperimentConfig load_experiment(const std::filesystem::path& file);

/// Built-in presets: name, one-line description and JSON text.
struct Preset {
  std::string name;
  std::string description;
  std::string json;
};
const std::vector<Preset>& builtin_presets();
const Preset* find_preset(const std::string& name);

/// Environment presets usable as {"preset": name} in the environment block.
MdpSpec environment_preset(const std::string& name);

/// Lowercase hex SHA-256.
std::string sha256_hex(const std::string& data);

// ---------------------------------------------------------------------------
// Running

/// One algorithm at one privacy level (epsilon is empty for non-private ones).
struct RunSpec {
  AlgorithmConfig algorithm;
  std::optional<double> epsilon;
  std::string label;  // e.g. "sdp-pe_eps0.1", "ucbvi"
};

std::vector<RunSpec> expand_runs(const ExperimentConfig& config);

/// Single replication of a run.
RegretTrace run_replication(const ExperimentConfig& config, const RunSpec& run,
                            std::uint64_t seed);

struct Aggregate {
  std::vector<double> mean;
  std::vector<double> sd;  // sample standard deviation; zero for one replication
};

/// Throws DomainError on an empty set or traces of unequal length.
Aggregate aggregate(const std::vector<RegretTrace>& traces);

struct RunResult {
  RunSpec spec;
  std::vector<RegretTrace> traces;  // replication i used seed base + i
  Aggregate summary;
};

struct ExperimentResult {
  std::string fingerprint;
  std::vector<RunResult> runs;
};

/// Replications run on worker threads; the result does not depend on the
/// thread count.
ExperimentResult run_experiment(const ExperimentConfig& config);

// ---------------------------------------------------------------------------
// Output

/// trace CSV: "# config_sha256=<hex> seed=<n> run=<label>", then
/// episode,cumulative_regret,stage,active_set_size.
std::string trace_csv(const RegretTrace& trace, const std::string& label);
/// episode,mean_cumulative_regret,sd_cumulative_regret
std::string aggregate_csv(const RunResult& run, const std::string& fingerprint);
nlohmann::json aggregate_json(const ExperimentResult& result, const ExperimentConfig& config);

/// Writes config.json, traces/<label>/rep_<i>.csv, aggregate/<label>.csv and
/// aggregate.json under `dir`. Every file is written to a temporary name and
/// renamed, so a failure leaves no partial file.
void emit(const ExperimentResult& result, const ExperimentConfig& config,
          const std::filesystem::path& dir);

/// Atomic text write; throws Error when the path is unwritable.
void write_file(const std::filesystem::path& file, const std::string& text);

// ---------------------------------------------------------------------------
// CSV reading

struct CsvTable {
  std::vector<std::pair<std::string, std::string>> metadata;  // from "# k=v" lines
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  std::size_t column(const std::string& name) const;
};

CsvTable parse_csv(const std::string& text);
CsvTable read_csv(const std::filesystem::path& file);

}  // namespace sdppe
