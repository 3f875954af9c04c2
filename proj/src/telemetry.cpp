#include "dsbo/telemetry.hpp"

#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>

#include "dsbo/errors.hpp"

namespace dsbo {

namespace {

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, end);
}

double parse_double(std::string_view s, std::size_t line) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ParseError(line, "bad number '" + std::string(s) + "'");
  }
  return v;
}

template <typename Int>
Int parse_int(std::string_view s, std::size_t line) {
  Int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ParseError(line, "bad integer '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace

std::uint64_t account_communication(const MixingMatrix& mixing, int dim_x, int dim_y) {
  const auto per_neighbor = static_cast<std::uint64_t>(2 * dim_x + 4 * dim_y);
  return static_cast<std::uint64_t>(mixing.total_degree()) * per_neighbor;
}

double consensus_error(const Eigen::MatrixXd& columns) {
  const Eigen::VectorXd mean = columns.rowwise().mean();
  return (columns.colwise() - mean).squaredNorm();
}

IterationRecord record(const SwarmState& state, const BilevelOracle& oracle, const MixingMatrix& mixing, long t,
                       std::uint64_t comm_floats_before, bool evaluate_accuracy) {
  IterationRecord rec;
  rec.t = t;
  const Vec x_bar = state.x.rowwise().mean();
  const Vec y_bar = state.y.rowwise().mean();
  const Vec z_bar = state.z.rowwise().mean();
  const int k = oracle.workers();

  double loss = 0.0;
  for (int w = 0; w < k; ++w) loss += oracle.upper_loss(w, x_bar, y_bar);
  rec.upper_loss = loss / k;

  if (auto exact = oracle.exact_hypergradient(x_bar)) {
    rec.hypergrad_sq = exact->squaredNorm();
  } else {
    Vec g = Vec::Zero(oracle.dim_x());
    for (int w = 0; w < k; ++w) {
      const SampleBatch all = SampleBatch::full(w);
      g += hypergradient_estimate(oracle, x_bar, y_bar, z_bar, all, all);
    }
    rec.hypergrad_sq = (g / k).squaredNorm();
  }

  rec.consensus_x = consensus_error(state.x);
  rec.consensus_y = consensus_error(state.y);
  rec.consensus_z = consensus_error(state.z);
  rec.comm_floats_cum = comm_floats_before + account_communication(mixing, oracle.dim_x(), oracle.dim_y());
  rec.comm_mb_cum = floats_to_megabytes(rec.comm_floats_cum);
  if (evaluate_accuracy) rec.test_accuracy = oracle.test_accuracy(y_bar);
  return rec;
}

std::size_t write_csv(const std::vector<IterationRecord>& trajectory, std::ostream& out) {
  std::ostringstream os;
  os << kCsvHeader << '\n';
  for (const IterationRecord& r : trajectory) {
    os << r.t << ',' << format_double(r.upper_loss) << ',' << format_double(r.hypergrad_sq) << ','
       << format_double(r.consensus_x) << ',' << format_double(r.consensus_y) << ','
       << format_double(r.consensus_z) << ',' << r.comm_floats_cum << ',' << format_double(r.comm_mb_cum) << ',';
    if (r.test_accuracy) os << format_double(*r.test_accuracy);
    os << '\n';
  }
  const std::string text = os.str();
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("write_csv: sink write failed");
  return text.size();
}

std::vector<IterationRecord> read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw ParseError(1, "missing telemetry CSV header");
  std::vector<IterationRecord> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    while (true) {
      const auto comma = rest.find(',');
      fields.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (fields.size() != 9) throw ParseError(line_no, "expected 9 fields");
    IterationRecord r;
    r.t = parse_int<long>(fields[0], line_no);
    r.upper_loss = parse_double(fields[1], line_no);
    r.hypergrad_sq = parse_double(fields[2], line_no);
    r.consensus_x = parse_double(fields[3], line_no);
    r.consensus_y = parse_double(fields[4], line_no);
    r.consensus_z = parse_double(fields[5], line_no);
    r.comm_floats_cum = parse_int<std::uint64_t>(fields[6], line_no);
    r.comm_mb_cum = parse_double(fields[7], line_no);
    if (!fields[8].empty()) r.test_accuracy = parse_double(fields[8], line_no);
    out.push_back(r);
  }
  return out;
}

std::string run_file_name(const std::string& problem, const std::string& topology, const std::string& mode,
                          std::uint64_t seed) {
  return problem + "_" + topology + "_" + mode + "_seed" + std::to_string(seed) + ".csv";
}

RunResult run(const RunConfig& config, const BilevelOracle& oracle, const MixingMatrix& mixing,
              const RunHooks& hooks) {
  config.validate();
  if (mixing.size() != oracle.workers()) {
    throw InvalidArgument("topology has " + std::to_string(mixing.size()) + " workers, problem has " +
                          std::to_string(oracle.workers()));
  }
  const std::uint64_t per_iteration = account_communication(mixing, oracle.dim_x(), oracle.dim_y());

  RunResult result;
  result.final_state = initialize_swarm(oracle, config);
  SwarmState& state = result.final_state;
  if (hooks.record_telemetry) result.records.reserve(static_cast<std::size_t>(config.iterations));
  for (long t = 0; t < config.iterations; ++t) {
    iterate(state, oracle, mixing, config);
    check_finite(state, t);
    if (hooks.record_telemetry) {
      const bool eval = t % config.eval_every == 0 || t + 1 == config.iterations;
      result.records.push_back(record(state, oracle, mixing, t, result.accounted_floats, eval));
      result.accounted_floats = result.records.back().comm_floats_cum;
    } else {
      result.accounted_floats += per_iteration;
    }
    if (hooks.after_iteration) hooks.after_iteration(state);
  }
  result.counted_floats = state.comm.floats;
  return result;
}

}  // namespace dsbo
