#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dsbo/optimizer.hpp"
#include "dsbo/oracle.hpp"
#include "dsbo/topology.hpp"

namespace dsbo {

inline constexpr double kBytesPerFloat = 8.0;
inline constexpr double kBytesPerMegabyte = 1024.0 * 1024.0;

// Metrics after iteration t, taken at the worker-mean iterates.
struct IterationRecord {
  long t = 0;
  double upper_loss = 0.0;    // (1/K) sum_k f_k(x_bar, y_bar)
  double hypergrad_sq = 0.0;  // ||grad F(x_bar)||^2, or its full-data estimate
  double consensus_x = 0.0;   // sum_k ||x_k - x_bar||^2
  double consensus_y = 0.0;
  double consensus_z = 0.0;
  std::uint64_t comm_floats_cum = 0;
  double comm_mb_cum = 0.0;
  std::optional<double> test_accuracy;

  bool operator==(const IterationRecord&) const = default;
};

// Floats sent between distinct workers in one iteration: every worker sends
// x, p (d_x each) and y, q, z, r (d_y each) to each neighbor.
std::uint64_t account_communication(const MixingMatrix& mixing, int dim_x, int dim_y);

inline double floats_to_megabytes(std::uint64_t floats) {
  return static_cast<double>(floats) * kBytesPerFloat / kBytesPerMegabyte;
}

double consensus_error(const Eigen::MatrixXd& columns);

// comm_floats_before is the cumulative count before iteration t; the record
// adds this iteration's accounted communication.
IterationRecord record(const SwarmState& state, const BilevelOracle& oracle, const MixingMatrix& mixing, long t,
                       std::uint64_t comm_floats_before, bool evaluate_accuracy);

inline constexpr const char* kCsvHeader =
    "t,upper_loss,hypergrad_sq,consensus_x,consensus_y,consensus_z,comm_floats_cum,comm_mb_cum,test_accuracy";

// Floats use 17 significant digits; a missing accuracy is an empty field.
// Returns the number of bytes written.
std::size_t write_csv(const std::vector<IterationRecord>& trajectory, std::ostream& out);
std::vector<IterationRecord> read_csv(std::istream& in);

// {problem}_{topology}_{mode}_seed{seed}.csv
std::string run_file_name(const std::string& problem, const std::string& topology, const std::string& mode,
                          std::uint64_t seed);

struct RunHooks {
  // Called after each iteration with the updated state.
  std::function<void(const SwarmState&)> after_iteration;
  bool record_telemetry = true;
};

struct RunResult {
  std::vector<IterationRecord> records;
  SwarmState final_state;
  // Floats counted message-by-message inside the mixing steps.
  std::uint64_t counted_floats = 0;
  // Floats predicted by account_communication times iterations.
  std::uint64_t accounted_floats = 0;
};

// Executes config.iterations iterations of the configured mode.
RunResult run(const RunConfig& config, const BilevelOracle& oracle, const MixingMatrix& mixing,
              const RunHooks& hooks = {});

}  // namespace dsbo
