#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dsbo/dataset.hpp"
#include "dsbo/logistic.hpp"
#include "dsbo/optimizer.hpp"
#include "dsbo/quadratic.hpp"
#include "dsbo/telemetry.hpp"
#include "dsbo/topology.hpp"

namespace dsbo {

// Configuration problems detected while resolving an experiment (bad keys,
// inconsistent topology sizes, unknown modes). Maps to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Missing or unreadable input data. Maps to exit code 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TopologySpec {
  std::string kind = "ring";  // ring | torus | random | complete
  int workers = 8;
  int rows = 2;  // torus only; rows * cols must equal workers
  int cols = 4;
  double edge_probability = 0.4;  // random only
  std::uint64_t seed = 0;         // random only
};

MixingMatrix build_topology(const TopologySpec& spec);

struct LogisticSpec {
  std::string dataset;  // LIBSVM path; empty selects the synthetic surrogate
  SyntheticBinaryOptions synthetic;
  bool heterogeneous = true;
  std::vector<double> ratios = {0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45};
  LogisticOptions options;
  std::uint64_t data_seed = 0;
};

struct ProblemSpec {
  std::string kind = "quadratic";  // quadratic | logistic
  std::string quadratic_file;      // empty: generate from `quadratic`
  QuadraticOptions quadratic;
  LogisticSpec logistic;
};

struct ExperimentSpec {
  ProblemSpec problem;
  TopologySpec topology;
  std::string mode = "alternating";  // simultaneous | alternating | sgd-baseline
  RunConfig run;
  // Replace eta/alpha/beta/B0/B with the K, lambda, epsilon scalings.
  bool scaled_defaults = false;
  double epsilon = 1e-3;
  std::string output;  // file, or directory for the default file name
};

// Full JSON form, including defaults. Round-trips through spec_from_json.
nlohmann::json spec_to_json(const ExperimentSpec& spec);
// Missing keys keep their defaults; unknown keys raise ConfigError.
ExperimentSpec spec_from_json(const nlohmann::json& j);
ExperimentSpec load_spec_file(const std::string& path);

// Sets a dotted key (e.g. "run.eta", "topology.kind") in a spec JSON from a
// textual value, parsed according to the existing value's type.
void apply_override(nlohmann::json& j, const std::string& dotted_key, const std::string& value);

struct BuiltProblem {
  std::unique_ptr<BilevelOracle> oracle;
  std::vector<ShardReport> partition_report;  // logistic + heterogeneous only
  std::string name;                           // "quadratic" or "logistic"
};

BuiltProblem build_problem(const ProblemSpec& spec, int workers);

// Effective RunConfig after applying scaled defaults and the mode alias.
RunConfig resolve_run_config(const ExperimentSpec& spec, double lambda);

struct ExperimentOutcome {
  RunResult result;
  RunConfig config;
  std::string topology_name;
  std::string problem_name;
  double lambda = 0.0;
};

ExperimentOutcome run_experiment(const ExperimentSpec& spec);

// Default CSV name for a spec, following run_file_name().
std::string default_output_name(const ExperimentSpec& spec);

}  // namespace dsbo
