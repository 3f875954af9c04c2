#include <doctest.h>

#include <sstream>

#include "dsbo/errors.hpp"
#include "dsbo/quadratic.hpp"
#include "dsbo/telemetry.hpp"
#include "oracles.hpp"

using namespace dsbo;

TEST_CASE("communication accounting") {
  CHECK(account_communication(build_ring(8), 10, 10) == 960);
  CHECK(build_complete(8).total_degree() == 56);
  CHECK(account_communication(MixingMatrix("single", Eigen::MatrixXd::Ones(1, 1)), 10, 10) == 0);
  CHECK(floats_to_megabytes(131072) == 1.0);
}

TEST_CASE("record fields") {
  QuadraticOptions o;
  o.workers = 4;
  o.offset = 0.0;
  const QuadraticBilevelProblem p(generate_quadratic(o));
  const MixingMatrix e = build_ring(4);
  RunConfig c;
  const SwarmState s = initialize_swarm(p, c);
  const IterationRecord r = record(s, p, e, 0, 0, true);
  CHECK(r.consensus_x == 0.0);
  CHECK(r.consensus_y == 0.0);
  CHECK(r.consensus_z == 0.0);
  CHECK(r.hypergrad_sq == 0.0);
  CHECK(r.comm_floats_cum == account_communication(e, 10, 10));
  CHECK_FALSE(r.test_accuracy.has_value());
}

TEST_CASE("hypergradient telemetry matches finite differences") {
  QuadraticOptions o;
  o.workers = 4;
  o.dim_x = o.dim_y = 5;
  o.noise_sigma = 0.5;
  const QuadraticInstance inst = generate_quadratic(o);
  const QuadraticBilevelProblem p(inst);
  RunConfig c;
  c.iterations = 40;
  c.batch0 = c.batch = 5;
  RunHooks hooks;
  long checked = 0;
  hooks.after_iteration = [&](const SwarmState& s) {
    const Vec xbar = s.x.rowwise().mean();
    const Vec fd = oracles::fd_gradient([&](const Eigen::VectorXd& v) { return oracles::reference_objective(inst, v); },
                                        xbar, 1e-5);
    const IterationRecord r = record(s, p, build_ring(4), s.t, 0, false);
    CHECK(std::abs(r.hypergrad_sq - fd.squaredNorm()) <= 1e-4 * fd.squaredNorm());
    ++checked;
  };
  run(c, p, build_ring(4), hooks);
  CHECK(checked == 40);
}

TEST_CASE("csv round trip") {
  std::ostringstream empty;
  CHECK(write_csv({}, empty) == std::string(kCsvHeader).size() + 1);
  CHECK(empty.str() == std::string(kCsvHeader) + "\n");

  std::vector<IterationRecord> traj(3);
  for (int i = 0; i < 3; ++i) {
    traj[i].t = i;
    traj[i].upper_loss = 0.1 + 1.0 / 3.0 * i;
    traj[i].hypergrad_sq = 1e-17 * (i + 1) / 7.0;
    traj[i].consensus_x = std::sqrt(2.0) * i;
    traj[i].comm_floats_cum = 960 * (i + 1);
    traj[i].comm_mb_cum = floats_to_megabytes(traj[i].comm_floats_cum);
  }
  traj[2].test_accuracy = 0.8125;
  std::stringstream s;
  const std::size_t bytes = write_csv(traj, s);
  CHECK(bytes == s.str().size());
  CHECK(read_csv(s) == traj);

  std::istringstream bad("nope\n");
  CHECK_THROWS_AS(read_csv(bad), ParseError);
  CHECK(run_file_name("quadratic", "ring", "alternating", 3) == "quadratic_ring_alternating_seed3.csv");
}

TEST_CASE("cumulative communication grows by the accounted amount") {
  QuadraticOptions o;
  o.workers = 8;
  const QuadraticBilevelProblem p(generate_quadratic(o));
  for (const MixingMatrix& e : {build_ring(8), build_torus(2, 4), build_random(8, 0.4, 2)}) {
    RunConfig c;
    c.iterations = 12;
    const RunResult res = run(c, p, e);
    const auto per = account_communication(e, 10, 10);
    for (std::size_t i = 0; i < res.records.size(); ++i) {
      CHECK(res.records[i].comm_floats_cum == per * (i + 1));
      CHECK(res.records[i].comm_mb_cum == res.records[i].comm_floats_cum * 8.0 / (1 << 20));
    }
    CHECK(res.counted_floats == res.accounted_floats);
  }
}
